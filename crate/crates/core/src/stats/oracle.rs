use serde::{Deserialize, Serialize};

use crate::dataset::{PromptVariant, Topic};

use super::alignment::{alignment_gap, rq2_cells};
use super::bootstrap::exceeds;
use super::divergence::{claim_statistic, rq1_cells, topic_divergence};
use super::{mean, BootstrapSettings, GroupedScores, Rq2Form, StatsError};

pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Gender-gap exaggeration test.
    Rq1,
    /// Alignment-gap test.
    Rq2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    pub p_value: f64,
    pub observed: f64,
    /// Number of equally likely resample assignments enumerated.
    pub assignments: u64,
}

/// One resampled vector: drawn `count` times from `pool`.
struct Target {
    pool: Vec<f64>,
    count: usize,
}

/// Exact exceedance probability of a bootstrap test, by walking every assignment of
/// pool elements to resample positions.
///
/// Uses the inequality, alignment form and variance convention from `settings`;
/// iterations and seed are ignored.
pub fn exact_enumeration_oracle(
    grouped: &GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
    kind: TestKind,
    settings: &BootstrapSettings,
    budget: u64,
) -> Result<ExactResult, StatsError> {
    let variance = settings.variance;
    let (observed, claims): (f64, Vec<Vec<Target>>) = match kind {
        TestKind::Rq1 => {
            let t = topic_divergence(grouped, topic, variant, variance)?;
            let claims = t
                .included
                .iter()
                .map(|id| {
                    let c = rq1_cells(grouped, id, variant).expect("included");
                    let men = [c.human_man, c.llm_man].concat();
                    let women = [c.human_woman, c.llm_woman].concat();
                    vec![
                        Target { pool: men.clone(), count: c.human_man.len() },
                        Target { pool: men, count: c.llm_man.len() },
                        Target { pool: women.clone(), count: c.human_woman.len() },
                        Target { pool: women, count: c.llm_woman.len() },
                    ]
                })
                .collect();
            (t.value, claims)
        }
        TestKind::Rq2 => {
            let g = alignment_gap(grouped, topic, variant)?;
            let observed = match settings.rq2_form {
                Rq2Form::Absolute => g.value,
                Rq2Form::Signed => g.mse_man - g.mse_woman,
            };
            let claims = g
                .included
                .iter()
                .map(|id| {
                    let c = rq2_cells(grouped, id, variant).expect("included");
                    let pool = [c.human_man, c.human_woman].concat();
                    vec![
                        Target { pool: pool.clone(), count: c.human_man.len() },
                        Target { pool, count: c.human_woman.len() },
                        // fixed base cell: one draw from a single-point pool
                        Target { pool: vec![mean(c.base)], count: 1 },
                    ]
                })
                .collect();
            (observed, claims)
        }
    };

    // (claim, target) per digit, radix = pool size
    let digits: Vec<(usize, usize, usize)> = claims
        .iter()
        .enumerate()
        .flat_map(|(ci, ts)| {
            ts.iter()
                .enumerate()
                .flat_map(move |(ti, t)| std::iter::repeat_n((ci, ti, t.pool.len()), t.count))
        })
        .collect();
    let needed: f64 = digits.iter().map(|d| d.2 as f64).product();
    if needed > budget as f64 {
        return Err(StatsError::BudgetExceeded { needed, budget });
    }

    let mut index = vec![0usize; digits.len()];
    let mut draws: Vec<Vec<Vec<f64>>> = claims
        .iter()
        .map(|ts| ts.iter().map(|t| Vec::with_capacity(t.count)).collect())
        .collect();
    let (mut hits, mut total) = (0u64, 0u64);
    loop {
        for v in draws.iter_mut().flatten() {
            v.clear();
        }
        for (&(ci, ti, _), &k) in digits.iter().zip(&index) {
            draws[ci][ti].push(claims[ci][ti].pool[k]);
        }
        let stat = match kind {
            TestKind::Rq1 => {
                draws
                    .iter()
                    .map(|d| claim_statistic(&d[0], &d[2], &d[1], &d[3], variance))
                    .sum::<f64>()
                    / draws.len() as f64
            }
            TestKind::Rq2 => {
                let n = draws.len() as f64;
                let mse_m = draws.iter().map(|d| (mean(&d[0]) - d[2][0]).powi(2)).sum::<f64>() / n;
                let mse_w = draws.iter().map(|d| (mean(&d[1]) - d[2][0]).powi(2)).sum::<f64>() / n;
                match settings.rq2_form {
                    Rq2Form::Absolute => (mse_w - mse_m).abs(),
                    Rq2Form::Signed => mse_m - mse_w,
                }
            }
        };
        total += 1;
        if exceeds(stat, observed, settings.inequality) {
            hits += 1;
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == digits.len() {
                return Ok(ExactResult {
                    p_value: hits as f64 / total as f64,
                    observed,
                    assignments: total,
                });
            }
            index[pos] += 1;
            if index[pos] < digits[pos].2 {
                break;
            }
            index[pos] = 0;
            pos += 1;
        }
    }
}
