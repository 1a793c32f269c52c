//! WebAssembly bindings for the browser demo. Every export takes and returns plain
//! strings, numbers or float arrays; structured results are JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use claimaudit::dataset::{Dimension, Gender, LlmCondition, PromptVariant, Topic};
use claimaudit::prompt::TemplateSet;
use claimaudit::stats::{
    claim_statistic, rq1_replicates, BootstrapSettings, Cell, GroupedScores, Inequality,
    VarianceConvention,
};

#[derive(Serialize)]
struct PromptPreview {
    prompt: String,
    rating: Option<u8>,
    refusal: bool,
}

/// Renders the rating prompt for `claim` and parses `reply` the way collected LLM
/// answers are parsed. `gender` is `"man"`, `"woman"` or empty for the neutral prompt.
pub fn preview_prompt(variant: u8, gender: &str, claim: &str, reply: &str) -> Result<String, String> {
    let variant = PromptVariant::try_from(variant).map_err(|e| e.to_string())?;
    let gender = match gender.trim().to_ascii_lowercase().as_str() {
        "" | "none" | "neutral" => None,
        "man" | "men" => Some(Gender::Man),
        "woman" | "women" => Some(Gender::Woman),
        other => other.parse::<Gender>().map(Some).map_err(|e| e.to_string())?,
    };
    let templates = TemplateSet::default();
    let prompt = templates
        .render_for(Dimension::GroupHarm, variant, gender, claim)
        .map_err(|e| e.to_string())?;
    let (rating, refusal) = match templates.parse(reply) {
        Ok(p) => (p.rating.map(|r| r.get()), p.refusal),
        Err(_) => (None, false),
    };
    let out = PromptPreview {
        prompt,
        rating,
        refusal,
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

fn check_cells(cells: [&[f64]; 4]) -> Result<(), String> {
    let names = ["men's ratings", "women's ratings", "man-conditioned LLM", "woman-conditioned LLM"];
    for (c, name) in cells.iter().zip(names) {
        if c.is_empty() {
            return Err(format!("{name}: enter at least one score"));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(format!("{name}: scores must be finite numbers"));
        }
    }
    Ok(())
}

/// Gender-gap exaggeration of one claim from its four z-score cells.
pub fn gap_statistic(hm: &[f64], hw: &[f64], lm: &[f64], lw: &[f64]) -> Result<f64, String> {
    check_cells([hm, hw, lm, lw])?;
    Ok(claim_statistic(hm, hw, lm, lw, VarianceConvention::Population))
}

#[derive(Serialize)]
struct NullDistribution {
    observed: f64,
    p_value: f64,
    iterations: u32,
    bin_edges: Vec<f64>,
    counts: Vec<u32>,
}

/// Bootstrap null distribution of the gap statistic for a single claim, as a
/// histogram with `bins` equal-width bins, plus the exceedance p-value.
pub fn null_distribution(
    hm: &[f64],
    hw: &[f64],
    lm: &[f64],
    lw: &[f64],
    iterations: u32,
    seed: u64,
    bins: u32,
) -> Result<String, String> {
    check_cells([hm, hw, lm, lw])?;
    if bins == 0 {
        return Err("bins must be at least 1".into());
    }
    let v = PromptVariant::One;
    let id = "claim".to_string();
    let grouped = GroupedScores::from_cells(vec![
        (id.clone(), Topic::Other("demo".into()), Cell::Human(Gender::Man), hm.to_vec()),
        (id.clone(), Topic::Other("demo".into()), Cell::Human(Gender::Woman), hw.to_vec()),
        (id.clone(), Topic::Other("demo".into()), Cell::Llm(LlmCondition::ManConditioned, v), lm.to_vec()),
        (id, Topic::Other("demo".into()), Cell::Llm(LlmCondition::WomanConditioned, v), lw.to_vec()),
    ]);
    let settings = BootstrapSettings {
        iterations,
        seed,
        inequality: Inequality::NonStrict,
        ..Default::default()
    };
    let run = rq1_replicates(&grouped, &Topic::Other("demo".into()), v, &settings)
        .map_err(|e| e.to_string())?;
    let lo = run.replicates.iter().copied().fold(run.observed, f64::min);
    let hi = run.replicates.iter().copied().fold(run.observed, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0u32; bins as usize];
    for &r in &run.replicates {
        let k = (((r - lo) / width) as usize).min(bins as usize - 1);
        counts[k] += 1;
    }
    let out = NullDistribution {
        observed: run.observed,
        p_value: run.result.p_value,
        iterations,
        bin_edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
        counts,
    };
    Ok(serde_json::to_string(&out).expect("serializes"))
}

#[wasm_bindgen(js_name = previewPrompt)]
pub fn preview_prompt_js(variant: u8, gender: &str, claim: &str, reply: &str) -> Result<String, JsError> {
    preview_prompt(variant, gender, claim, reply).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = gapStatistic)]
pub fn gap_statistic_js(hm: &[f64], hw: &[f64], lm: &[f64], lw: &[f64]) -> Result<f64, JsError> {
    gap_statistic(hm, hw, lm, lw).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = nullDistribution)]
#[allow(clippy::too_many_arguments)]
pub fn null_distribution_js(
    hm: &[f64],
    hw: &[f64],
    lm: &[f64],
    lw: &[f64],
    iterations: u32,
    seed: u32,
    bins: u32,
) -> Result<String, JsError> {
    null_distribution(hm, hw, lm, lw, iterations, seed as u64, bins).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_renders_and_parses() {
        let json = preview_prompt(1, "woman", "Water is wet.", " 5.").unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["prompt"].as_str().unwrap().contains("as if you were a woman"));
        assert_eq!(v["rating"], 5);
        let neutral = preview_prompt(2, "", "Water is wet.", "As an AI, I cannot").unwrap();
        let v: serde_json::Value = serde_json::from_str(&neutral).unwrap();
        assert!(!v["prompt"].as_str().unwrap().contains("{gender}"));
        assert_eq!(v["refusal"], true);
        assert!(v["rating"].is_null());
        assert!(preview_prompt(3, "", "x", "1").is_err());
    }

    #[test]
    fn gap_matches_hand_value() {
        let e = gap_statistic(&[0.5, 0.5], &[-0.5, -0.5], &[-1.0], &[1.0]).unwrap();
        assert!((e - 0.6667).abs() < 1e-4);
        assert!(gap_statistic(&[], &[1.0], &[1.0], &[1.0]).is_err());
        assert!(gap_statistic(&[f64::NAN], &[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn histogram_accounts_for_every_replicate() {
        let json = null_distribution(&[0.5, 0.5], &[-0.5, -0.5], &[-1.0], &[1.0], 500, 3, 10).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let total: u64 = v["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
        assert_eq!(total, 500);
        assert_eq!(v["bin_edges"].as_array().unwrap().len(), 11);
        let p = v["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(json, null_distribution(&[0.5, 0.5], &[-0.5, -0.5], &[-1.0], &[1.0], 500, 3, 10).unwrap());
        assert!(null_distribution(&[1.0], &[1.0], &[1.0], &[1.0], 0, 3, 10).is_err());
    }
}
