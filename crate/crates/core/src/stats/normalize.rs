use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    Annotation, Dimension, Gender, LlmCondition, NormalizedScore, PromptVariant, Rater, Topic,
};
use crate::ingest::DatasetBundle;

/// Which annotations share a mean and standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationPolicy {
    /// All human ratings together; LLM ratings together per prompt variant.
    #[default]
    Source,
    /// All human ratings together; all LLM ratings together across variants.
    SourcePooledVariants,
    /// Human ratings per gender; LLM ratings per (variant, condition).
    SourceAndCondition,
}

impl NormalizationPolicy {
    pub fn group_key(self, rater: &Rater) -> String {
        match (self, rater) {
            (NormalizationPolicy::SourceAndCondition, Rater::Human { gender, .. }) => {
                format!("HUMAN/{gender}")
            }
            (_, Rater::Human { .. }) => "HUMAN".to_string(),
            (NormalizationPolicy::Source, Rater::Llm { variant, .. }) => format!("LLM/P{variant}"),
            (NormalizationPolicy::SourcePooledVariants, Rater::Llm { .. }) => "LLM".to_string(),
            (NormalizationPolicy::SourceAndCondition, Rater::Llm { variant, condition }) => {
                format!("LLM/P{variant}/{condition}")
            }
        }
    }
}

/// Per-claim score cell: one source and condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cell {
    Human(Gender),
    Llm(LlmCondition, PromptVariant),
}

impl Cell {
    pub fn of(rater: &Rater) -> Cell {
        match rater {
            Rater::Human { gender, .. } => Cell::Human(*gender),
            Rater::Llm { condition, variant } => Cell::Llm(*condition, *variant),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Human(g) => write!(f, "HUMAN/{g}"),
            Cell::Llm(c, v) => write!(f, "LLM/P{v}/{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NormalizeWarning {
    /// All ratings in the group were equal (or there was only one); z set to 0.
    DegenerateGroup { group_key: String, size: usize },
}

impl fmt::Display for NormalizeWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormalizeWarning::DegenerateGroup { group_key, size } => write!(
                f,
                "group {group_key} ({size} ratings) has no spread; its z-scores are 0"
            ),
        }
    }
}

/// z-scores arranged by (claim, cell), with the claim-to-topic map needed for
/// topic-level statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupedScores {
    pub policy: NormalizationPolicy,
    topics: BTreeMap<String, Topic>,
    cells: BTreeMap<String, BTreeMap<Cell, Vec<f64>>>,
    pub scores: Vec<NormalizedScore>,
    pub warnings: Vec<NormalizeWarning>,
}

/// Standardizes `values` to mean 0 and population variance 1. `None` when fewer than
/// two values or all values are equal.
pub fn zscores(values: &[f64]) -> Option<Vec<f64>> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    if values.iter().all(|&x| x == values[0]) || var <= 0.0 {
        return None;
    }
    let sd = var.sqrt();
    Some(values.iter().map(|x| (x - m) / sd).collect())
}

/// z-scores every annotation within its normalization group.
///
/// Degenerate groups (constant ratings or a single rating) keep their members with
/// z = 0 and produce a warning. The result carries no topic map; see
/// [`GroupedScores::with_topics`] or [`GroupedScores::from_bundle`].
pub fn zscore_normalize(annotations: &[Annotation], policy: NormalizationPolicy) -> GroupedScores {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, a) in annotations.iter().enumerate() {
        groups.entry(policy.group_key(&a.rater)).or_default().push(i);
    }
    let mut z = vec![0.0; annotations.len()];
    let mut key_of = vec![String::new(); annotations.len()];
    let mut warnings = Vec::new();
    for (key, idx) in &groups {
        let raw: Vec<f64> = idx.iter().map(|&i| annotations[i].rating.get() as f64).collect();
        match zscores(&raw) {
            Some(zs) => {
                for (&i, v) in idx.iter().zip(zs) {
                    z[i] = v;
                }
            }
            None => warnings.push(NormalizeWarning::DegenerateGroup {
                group_key: key.clone(),
                size: idx.len(),
            }),
        }
        for &i in idx {
            key_of[i] = key.clone();
        }
    }
    let mut cells: BTreeMap<String, BTreeMap<Cell, Vec<f64>>> = BTreeMap::new();
    for (a, &v) in annotations.iter().zip(&z) {
        cells
            .entry(a.claim_id.clone())
            .or_default()
            .entry(Cell::of(&a.rater))
            .or_default()
            .push(v);
    }
    let scores = z
        .into_iter()
        .zip(key_of)
        .enumerate()
        .map(|(annotation_ref, (z, group_key))| NormalizedScore {
            annotation_ref,
            z,
            group_key,
        })
        .collect();
    GroupedScores {
        policy,
        topics: BTreeMap::new(),
        cells,
        scores,
        warnings,
    }
}

impl GroupedScores {
    /// Normalizes the bundle's annotations on one dimension and attaches topics.
    pub fn from_bundle(
        bundle: &DatasetBundle,
        dimension: Dimension,
        policy: NormalizationPolicy,
    ) -> GroupedScores {
        let anns: Vec<Annotation> = bundle
            .annotations
            .iter()
            .filter(|a| a.dimension == dimension)
            .cloned()
            .collect();
        zscore_normalize(&anns, policy).with_topics(bundle.topic_of())
    }

    /// Builds scores directly from z values, bypassing normalization.
    pub fn from_cells<I>(entries: I) -> GroupedScores
    where
        I: IntoIterator<Item = (String, Topic, Cell, Vec<f64>)>,
    {
        let mut g = GroupedScores::default();
        for (claim, topic, cell, zs) in entries {
            g.topics.insert(claim.clone(), topic);
            if !zs.is_empty() {
                g.cells.entry(claim).or_default().entry(cell).or_default().extend(zs);
            }
        }
        g
    }

    pub fn with_topics(mut self, topics: BTreeMap<String, Topic>) -> Self {
        self.topics = topics;
        self
    }

    pub fn cell(&self, claim_id: &str, cell: Cell) -> &[f64] {
        self.cells
            .get(claim_id)
            .and_then(|m| m.get(&cell))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn topic_of(&self, claim_id: &str) -> Option<&Topic> {
        self.topics.get(claim_id)
    }

    /// Claims of `topic` that have at least one score, in id order.
    pub fn claims_in(&self, topic: &Topic) -> Vec<&str> {
        self.topics
            .iter()
            .filter(|(c, t)| *t == topic && self.cells.contains_key(c.as_str()))
            .map(|(c, _)| c.as_str())
            .collect()
    }

    /// Topics that have at least one scored claim, in report order.
    pub fn topics(&self) -> Vec<Topic> {
        let mut ts: Vec<Topic> = self
            .topics
            .iter()
            .filter(|(c, _)| self.cells.contains_key(c.as_str()))
            .map(|(_, t)| t.clone())
            .collect();
        ts.sort();
        ts.dedup();
        ts
    }

    pub fn claim_cells(&self, claim_id: &str) -> impl Iterator<Item = (Cell, &[f64])> {
        self.cells
            .get(claim_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(c, v)| (*c, v.as_slice())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Rating;

    fn ann(claim: &str, rater: Rater, r: u8) -> Annotation {
        Annotation {
            claim_id: claim.into(),
            rater,
            dimension: Dimension::GroupHarm,
            rating: Rating::new(r).unwrap(),
            harmed_groups: None,
        }
    }

    fn man(w: &str) -> Rater {
        Rater::Human {
            worker_id: w.into(),
            gender: Gender::Man,
        }
    }

    /// Independent arithmetic: mean 3, population sd sqrt(3.5).
    #[test]
    fn human_group_z_values() {
        let anns: Vec<_> = [1, 2, 3, 6].iter().map(|&r| ann("c1", man("w"), r)).collect();
        let g = zscore_normalize(&anns, NormalizationPolicy::Source);
        let sd = 3.5f64.sqrt();
        let expected = [-2.0 / sd, -1.0 / sd, 0.0, 3.0 / sd];
        for (s, e) in g.scores.iter().zip(expected) {
            assert!((s.z - e).abs() < 1e-12, "{} vs {}", s.z, e);
            assert_eq!(s.group_key, "HUMAN");
        }
        assert!((expected[0] - -1.0690).abs() < 1e-4);
        assert!((expected[3] - 1.6036).abs() < 1e-4);
    }

    #[test]
    fn full_scale_has_unit_variance() {
        let anns: Vec<_> = (1..=6).map(|r| ann("c1", man("w"), r)).collect();
        let g = zscore_normalize(&anns, NormalizationPolicy::Source);
        let zs: Vec<f64> = g.scores.iter().map(|s| s.z).collect();
        let m = zs.iter().sum::<f64>() / 6.0;
        let v = zs.iter().map(|z| (z - m).powi(2)).sum::<f64>() / 6.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn constant_group_is_degenerate() {
        let anns: Vec<_> = (0..3).map(|_| ann("c1", man("w"), 4)).collect();
        let g = zscore_normalize(&anns, NormalizationPolicy::Source);
        assert!(g.scores.iter().all(|s| s.z == 0.0));
        assert_eq!(
            g.warnings,
            vec![NormalizeWarning::DegenerateGroup {
                group_key: "HUMAN".into(),
                size: 3
            }]
        );
    }

    #[test]
    fn policies_split_groups() {
        let p1 = Rater::Llm {
            condition: LlmCondition::Base,
            variant: PromptVariant::One,
        };
        let p2 = Rater::Llm {
            condition: LlmCondition::ManConditioned,
            variant: PromptVariant::Two,
        };
        assert_eq!(NormalizationPolicy::Source.group_key(&p1), "LLM/P1");
        assert_eq!(NormalizationPolicy::SourcePooledVariants.group_key(&p2), "LLM");
        assert_eq!(
            NormalizationPolicy::SourceAndCondition.group_key(&p2),
            "LLM/P2/MAN_CONDITIONED"
        );
        assert_eq!(NormalizationPolicy::SourceAndCondition.group_key(&man("w")), "HUMAN/MAN");

        let anns = vec![ann("c1", p1.clone(), 1), ann("c1", p1, 3), ann("c1", man("w"), 2), ann("c2", man("w"), 6)];
        let g = zscore_normalize(&anns, NormalizationPolicy::Source);
        assert_eq!(g.cell("c1", Cell::Llm(LlmCondition::Base, PromptVariant::One)), &[-1.0, 1.0]);
        assert_eq!(g.cell("c1", Cell::Human(Gender::Man)), &[-1.0]);
        assert_eq!(g.cell("c2", Cell::Human(Gender::Man)), &[1.0]);
        assert!(g.cell("c3", Cell::Human(Gender::Man)).is_empty());
    }
}
