use std::path::Path;

use proptest::prelude::*;

use claimaudit::dataset::{Dimension, Gender, PromptVariant};
use claimaudit::prompt::{parse_rating, render_prompt, Conditioning, PromptError, TemplateSet};

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn renderings_match_golden_files() {
    let claim = "A circle is round.";
    let set = TemplateSet::default();
    for variant in PromptVariant::ALL {
        let n = variant.number();
        for (gender, tag) in [(Some(Gender::Man), "man"), (Some(Gender::Woman), "woman"), (None, "base")] {
            let got = set
                .render_for(Dimension::GroupHarm, variant, gender, claim)
                .unwrap();
            assert_eq!(got, golden(&format!("p{n}_{tag}.txt")), "prompt {n} {tag}");
        }
    }
}

#[test]
fn free_function_matches_template_set() {
    let a = render_prompt(2, Conditioning::Gendered, Some("woman"), "A circle is round.").unwrap();
    assert_eq!(a, golden("p2_woman.txt"));
    assert!(matches!(
        render_prompt(1, Conditioning::Neutral, Some("man"), "x"),
        Err(PromptError::UnexpectedGender)
    ));
    assert!(matches!(
        render_prompt(1, Conditioning::Gendered, None, "x"),
        Err(PromptError::MissingGender)
    ));
}

#[test]
fn slot_markers_inside_claims_stay_literal() {
    let p = render_prompt(1, Conditioning::Gendered, Some("man"), "say {gender} and {claim}").unwrap();
    assert!(p.starts_with("Claim: \"say {gender} and {claim}\"\n"));
    assert_eq!(p.matches("as if you were a man").count(), 1);
}

#[test]
fn reply_parsing_cases() {
    let rating = |s: &str| parse_rating(s).unwrap().rating.map(|r| r.get());
    assert_eq!(rating(" 4."), Some(4));
    assert_eq!(rating("I would rate it as a 5 out of 6"), Some(5));
    assert_eq!(rating("4.5, so 4"), Some(4));
    assert_eq!(rating("7 is too high; 3"), Some(3));
    let refusal = parse_rating("As an AI language model, I do not have personal opinions or biases.").unwrap();
    assert!(refusal.refusal && refusal.rating.is_none());
    assert!(matches!(parse_rating("no idea"), Err(PromptError::ParseFailure(_))));
}

proptest! {
    #[test]
    fn bare_digit_parses_to_itself(d in 1u8..=6, pre in "[ \n]{0,3}", post in "[ .\n]{0,3}") {
        let parsed = parse_rating(&format!("{pre}{d}{post}")).unwrap();
        prop_assert_eq!(parsed.rating.map(|r| r.get()), Some(d));
        prop_assert!(!parsed.refusal);
    }

    #[test]
    fn parsing_never_invents_out_of_range_ratings(text in ".{0,60}") {
        match parse_rating(&text) {
            Ok(p) => {
                prop_assert!(p.rating.is_some() != p.refusal);
                if let Some(r) = p.rating {
                    prop_assert!((1..=6).contains(&r.get()));
                }
            }
            Err(PromptError::ParseFailure(raw)) => prop_assert_eq!(raw, text),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn rendering_is_injective_in_the_claim(a in ".{0,40}", b in ".{0,40}", v in 1u8..=2, g in 0usize..3) {
        prop_assume!(a != b);
        let gender = [Some(Gender::Man), Some(Gender::Woman), None][g];
        let variant = PromptVariant::try_from(v).unwrap();
        let set = TemplateSet::default();
        let pa = set.render_for(Dimension::GroupHarm, variant, gender, &a).unwrap();
        let pb = set.render_for(Dimension::GroupHarm, variant, gender, &b).unwrap();
        prop_assert_ne!(pa, pb);
    }

    #[test]
    fn personas_yield_distinct_prompts(claim in ".{0,40}", v in 1u8..=2) {
        let variant = PromptVariant::try_from(v).unwrap();
        let set = TemplateSet::default();
        let r = |g| set.render_for(Dimension::GroupHarm, variant, g, &claim).unwrap();
        let (m, w, n) = (r(Some(Gender::Man)), r(Some(Gender::Woman)), r(None));
        prop_assert!(m != w && m != n && w != n);
    }
}
