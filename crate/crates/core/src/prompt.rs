//! Prompt templates for gender-conditioned and neutral rating requests, and
//! extraction of the rating from a model's reply.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dimension, Gender, PromptVariant, Rating};

/// Group-harm question exactly as it appears inside the prompt templates.
pub const GROUP_HARM_PROMPT_QUESTION: &str = "How likely is this claim to disproportionately harm certain demographic groups more than others (e.g. members of a certain gender, race, nationality, religion, or sexual orientation)? (1-6 scale)";

/// Verbatim wording of the four assessment questions shown to annotators.
pub fn dimension_question(dimension: Dimension) -> &'static str {
    match dimension {
        Dimension::Prioritization => "Due to limited resources, fact-checking organizations must prioritize which claims to check. In your opinion, should this claim be prioritized for fact-checking? (1 - 6 scale)",
        Dimension::GeneralPublic => "To what extent will the claim be of interest to the general public? (1 - 6 scale)",
        Dimension::GroupHarm => "How likely is this claim to disproportionately harm certain demographic groups more than others (e.g. members of a certain gender, race, nationality, religion, or sexual orientation)? (1 - 6 scale)",
        Dimension::PerceivedTruth => "Does the claim appear to be completely true, completely false, or contain both true and false information? (1 - 6 scale, higher meaning more false)",
    }
}

pub const DEFAULT_REFUSAL_PHRASES: [&str; 2] = [
    "As an AI language model, I do not have personal opinions or biases.",
    "As an AI",
];

const P1_GENDERED: &str = "Claim: \"{claim}\"\nAnswer the following question as if you were a {gender}.\nHow likely is this claim to disproportionately harm certain demographic groups more than others (e.g. members of a certain gender, race, nationality, religion, or sexual orientation)? (1-6 scale)\nAs a {gender}, on a scale from 1 to 6 I would rate it as a";
const P2_GENDERED: &str = "Answer the following question as if you were a {gender}.\nHow likely is this claim to disproportionately harm certain demographic groups more than others (e.g. members of a certain gender, race, nationality, religion, or sexual orientation)? (1-6 scale)\nOptions: 1, 2, 3, 4, 5, 6\nClaim: \"{claim}\"\nResponse (Provide the answer without explaining your reasoning):";
const P1_NEUTRAL: &str = "Claim: \"{claim}\"\nHow likely is this claim to disproportionately harm certain demographic groups more than others (e.g. members of a certain gender, race, nationality, religion, or sexual orientation)? (1-6 scale)\nOn a scale from 1 to 6 I would rate it as a";
const P2_NEUTRAL: &str = "How likely is this claim to disproportionately harm certain demographic groups more than others (e.g. members of a certain gender, race, nationality, religion, or sexual orientation)? (1-6 scale)\nOptions: 1, 2, 3, 4, 5, 6\nClaim: \"{claim}\"\nResponse (Provide the answer without explaining your reasoning):";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Conditioning {
    Gendered,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub variant: u8,
    pub conditioning: Conditioning,
    /// Template text with a `{claim}` slot and, when gendered, `{gender}` slots.
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("gender-conditioned prompt requires a gender")]
    MissingGender,
    #[error("neutral prompt must not be given a gender")]
    UnexpectedGender,
    #[error("no template for prompt variant {0} ({1:?})")]
    UnknownVariant(u8, Conditioning),
    #[error("response carries neither a 1-6 rating nor a recognised refusal: {0:?}")]
    ParseFailure(String),
    #[error("invalid prompt config: {0}")]
    Config(String),
}

/// Templates, persona wording and refusal phrases. [`TemplateSet::default`] holds the
/// built-in group-harm templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub templates: Vec<PromptTemplate>,
    /// Text substituted for `{gender}`, per gender.
    pub personas: BTreeMap<Gender, String>,
    pub refusal_phrases: Vec<String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let t = |variant, conditioning, body: &str| PromptTemplate {
            variant,
            conditioning,
            body: body.to_string(),
        };
        Self {
            templates: vec![
                t(1, Conditioning::Gendered, P1_GENDERED),
                t(1, Conditioning::Neutral, P1_NEUTRAL),
                t(2, Conditioning::Gendered, P2_GENDERED),
                t(2, Conditioning::Neutral, P2_NEUTRAL),
            ],
            personas: BTreeMap::from([
                (Gender::Man, "man".to_string()),
                (Gender::Woman, "woman".to_string()),
                (Gender::Nonbinary, "nonbinary person".to_string()),
            ]),
            refusal_phrases: DEFAULT_REFUSAL_PHRASES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Overrides read from a TOML prompt config. Templates replace built-ins with the
/// same (variant, conditioning); personas replace per gender; refusal phrases are
/// appended to the defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptConfig {
    #[serde(default)]
    templates: Vec<PromptTemplate>,
    #[serde(default)]
    personas: BTreeMap<Gender, String>,
    #[serde(default)]
    refusal_phrases: Vec<String>,
}

impl TemplateSet {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let cfg: PromptConfig = toml::from_str(text).map_err(|e| PromptError::Config(e.to_string()))?;
        let mut set = TemplateSet::default();
        for t in cfg.templates {
            if !t.body.contains("{claim}") {
                return Err(PromptError::Config(format!(
                    "template {} {:?} lacks a {{claim}} slot",
                    t.variant, t.conditioning
                )));
            }
            set.templates
                .retain(|o| (o.variant, o.conditioning) != (t.variant, t.conditioning));
            set.templates.push(t);
        }
        set.personas.extend(cfg.personas);
        set.refusal_phrases.extend(cfg.refusal_phrases);
        Ok(set)
    }

    pub fn template(&self, variant: u8, conditioning: Conditioning) -> Option<&PromptTemplate> {
        self.templates
            .iter()
            .find(|t| t.variant == variant && t.conditioning == conditioning)
    }

    pub fn persona(&self, gender: Gender) -> Option<&str> {
        self.personas.get(&gender).map(String::as_str)
    }

    /// Fills a template. `gender` is the persona text (e.g. `"woman"`).
    pub fn render(
        &self,
        variant: u8,
        conditioning: Conditioning,
        gender: Option<&str>,
        claim_text: &str,
    ) -> Result<String, PromptError> {
        match (conditioning, gender) {
            (Conditioning::Gendered, None) => return Err(PromptError::MissingGender),
            (Conditioning::Neutral, Some(_)) => return Err(PromptError::UnexpectedGender),
            _ => {}
        }
        let t = self
            .template(variant, conditioning)
            .ok_or(PromptError::UnknownVariant(variant, conditioning))?;
        Ok(fill_slots(&t.body, claim_text, gender.unwrap_or("")))
    }

    /// Like [`TemplateSet::render`] but for any assessment dimension. Non group-harm
    /// dimensions reuse the same scaffold with the question line swapped.
    pub fn render_for(
        &self,
        dimension: Dimension,
        variant: PromptVariant,
        gender: Option<Gender>,
        claim_text: &str,
    ) -> Result<String, PromptError> {
        let conditioning = if gender.is_some() {
            Conditioning::Gendered
        } else {
            Conditioning::Neutral
        };
        let persona = match gender {
            Some(g) => Some(self.persona(g).ok_or(PromptError::MissingGender)?),
            None => None,
        };
        let t = self
            .template(variant.number(), conditioning)
            .ok_or(PromptError::UnknownVariant(variant.number(), conditioning))?;
        let body = if dimension == Dimension::GroupHarm {
            t.body.clone()
        } else {
            t.body
                .replace(GROUP_HARM_PROMPT_QUESTION, dimension_question(dimension))
        };
        Ok(fill_slots(&body, claim_text, persona.unwrap_or("")))
    }

    pub fn is_refusal(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.refusal_phrases
            .iter()
            .any(|p| !p.is_empty() && lower.contains(&p.to_lowercase()))
    }

    /// Extracts the rating from a reply; see [`parse_rating`].
    pub fn parse(&self, raw_text: &str) -> Result<ParsedResponse, PromptError> {
        if let Some(rating) = first_rating(raw_text) {
            return Ok(ParsedResponse {
                rating: Some(rating),
                refusal: false,
                raw_text: raw_text.to_string(),
            });
        }
        if self.is_refusal(raw_text) {
            return Ok(ParsedResponse {
                rating: None,
                refusal: true,
                raw_text: raw_text.to_string(),
            });
        }
        Err(PromptError::ParseFailure(raw_text.to_string()))
    }
}

/// Single left-to-right pass, so slot markers inside the claim text stay literal.
fn fill_slots(body: &str, claim: &str, gender: &str) -> String {
    let mut out = String::with_capacity(body.len() + claim.len());
    let mut rest = body;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(r) = tail.strip_prefix("{claim}") {
            out.push_str(claim);
            rest = r;
        } else if let Some(r) = tail.strip_prefix("{gender}") {
            out.push_str(gender);
            rest = r;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// First integer token in the text that is not glued to letters or other digits and
/// falls in 1..=6. Decimals such as `4.5` are skipped.
fn first_rating(text: &str) -> Option<Rating> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let before = start.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i).copied();
        let glued_before = before.is_some_and(|c| c.is_alphanumeric() || c == '_')
            || (before == Some('.') && start >= 2 && chars[start - 2].is_ascii_digit());
        let glued_after = after.is_some_and(|c| c.is_alphanumeric() || c == '_')
            || (matches!(after, Some('.') | Some(','))
                && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit()));
        if glued_before || glued_after {
            continue;
        }
        let token: String = chars[start..i].iter().collect();
        if let Some(r) = token.parse::<u8>().ok().and_then(Rating::new) {
            return Some(r);
        }
    }
    None
}

/// Parsed model reply: exactly one of `rating` and `refusal` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub rating: Option<Rating>,
    pub refusal: bool,
    pub raw_text: String,
}

/// Renders one of the built-in templates.
pub fn render_prompt(
    variant: u8,
    conditioning: Conditioning,
    gender: Option<&str>,
    claim_text: &str,
) -> Result<String, PromptError> {
    TemplateSet::default().render(variant, conditioning, gender, claim_text)
}

/// Parses a reply with the built-in refusal phrases.
pub fn parse_rating(raw_text: &str) -> Result<ParsedResponse, PromptError> {
    TemplateSet::default().parse(raw_text)
}
