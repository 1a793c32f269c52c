//! Normalization, the gender-gap and alignment statistics, and their bootstrap
//! significance tests.

mod alignment;
mod bootstrap;
mod divergence;
mod normalize;
mod oracle;
pub mod rng;

use serde::{Deserialize, Serialize};

pub use alignment::{alignment_gap, gender_mse, rq2_cells, AlignmentGap, Rq2Cells};
pub use bootstrap::{
    exceeds, rq1_bootstrap, rq1_replicates, rq2_bootstrap, rq2_replicates, BootstrapRun,
};
pub use divergence::{claim_divergence, claim_statistic, rq1_cells, topic_divergence, Rq1Cells};
pub use normalize::{
    zscore_normalize, zscores, Cell, GroupedScores, NormalizationPolicy, NormalizeWarning,
};
pub use oracle::{exact_enumeration_oracle, ExactResult, TestKind, DEFAULT_ENUMERATION_BUDGET};

use crate::dataset::ExcludedClaim;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("claim `{claim_id}` has no {cell} scores")]
    MissingCell { claim_id: String, cell: String },
    #[error("topic `{topic}` has no claim with every required score cell")]
    EmptyTopic { topic: String, excluded: Vec<ExcludedClaim> },
    #[error("exact enumeration needs {needed} assignments, budget is {budget}")]
    BudgetExceeded { needed: f64, budget: u64 },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

/// Variance convention for the per-claim spread terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Divide by n. Single-score cells have variance 0.
    #[default]
    Population,
    /// Divide by n - 1; defined as 0 below two scores.
    Sample,
}

/// How a bootstrap replicate is compared with the observed statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// Count replicates strictly above the observed value.
    Strict,
    /// Count replicates at or above the observed value.
    #[default]
    NonStrict,
}

/// Form of the alignment-gap bootstrap statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rq2Form {
    /// |MSE_woman - MSE_man|, two-sided.
    #[default]
    Absolute,
    /// MSE_man - MSE_woman without the absolute value.
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub iterations: u32,
    pub seed: u64,
    pub inequality: Inequality,
    pub rq2_form: Rq2Form,
    pub variance: VarianceConvention,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            seed: 0x5eed,
            inequality: Inequality::NonStrict,
            rq2_form: Rq2Form::Absolute,
            variance: VarianceConvention::Population,
        }
    }
}

impl BootstrapSettings {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.iterations == 0 {
            return Err(StatsError::InvalidSettings("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Topic-level statistic with the claims that entered it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicStatistic {
    pub value: f64,
    pub included: Vec<String>,
    pub excluded: Vec<ExcludedClaim>,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Variance of the concatenation of `a` and `b`, two-pass.
pub(crate) fn pooled_variance(a: &[f64], b: &[f64], conv: VarianceConvention) -> f64 {
    let n = a.len() + b.len();
    if n == 0 {
        return 0.0;
    }
    let m = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / n as f64;
    let ss: f64 = a.iter().chain(b).map(|x| (x - m) * (x - m)).sum();
    match conv {
        VarianceConvention::Population => ss / n as f64,
        VarianceConvention::Sample if n > 1 => ss / (n - 1) as f64,
        VarianceConvention::Sample => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooled_variance_conventions() {
        let v = pooled_variance(&[1.0, 2.0], &[3.0, 6.0], VarianceConvention::Population);
        assert!((v - 3.5).abs() < 1e-12);
        let s = pooled_variance(&[1.0, 2.0], &[3.0, 6.0], VarianceConvention::Sample);
        assert!((s - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(pooled_variance(&[4.0], &[], VarianceConvention::Sample), 0.0);
        assert_eq!(pooled_variance(&[], &[], VarianceConvention::Population), 0.0);
    }
}
