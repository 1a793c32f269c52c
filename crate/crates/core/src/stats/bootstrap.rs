use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{PromptVariant, StatisticKind, Topic, TopicResult};

use super::alignment::{alignment_gap, rq2_cells};
use super::divergence::{claim_statistic, rq1_cells, topic_divergence};
use super::rng::{stable_hash, substream};
use super::{mean, BootstrapSettings, GroupedScores, Inequality, Rq2Form, StatsError};

/// Whether a replicate counts as at least as extreme as the observed statistic.
/// Differences within 1e-12 (relative to max(1, |observed|)) are ties, so
/// resamples that reproduce the observed data are not split by rounding noise.
pub fn exceeds(replicate: f64, observed: f64, inequality: Inequality) -> bool {
    let tol = 1e-12 * observed.abs().max(1.0);
    match inequality {
        Inequality::Strict => replicate > observed + tol,
        Inequality::NonStrict => replicate >= observed - tol,
    }
}

/// A finished bootstrap test with its replicate distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub result: TopicResult,
    /// The statistic the replicates are compared with. Equals `result.value` except
    /// for the signed alignment form, where it is `mse_man - mse_woman`.
    pub observed: f64,
    pub replicates: Vec<f64>,
}

#[derive(Default)]
struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

fn draw(pool: &[f64], n: usize, rng: &mut impl Rng, out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..n).map(|_| pool[rng.random_range(0..pool.len())]));
}

fn run_replicates<F>(iterations: u32, f: F) -> Vec<f64>
where
    F: Fn(u64, &mut Scratch) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..iterations)
            .into_par_iter()
            .map_init(Scratch::default, |s, b| f(b as u64, s))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = Scratch::default();
        (0..iterations).map(|b| f(b as u64, &mut s)).collect()
    }
}

fn p_value(replicates: &[f64], observed: f64, inequality: Inequality) -> f64 {
    let hits = replicates
        .iter()
        .filter(|&&r| exceeds(r, observed, inequality))
        .count();
    hits as f64 / replicates.len() as f64
}

struct Rq1Claim {
    key: u64,
    men_pool: Vec<f64>,
    women_pool: Vec<f64>,
    counts: [usize; 4],
}

/// Gender-gap test for one topic and prompt variant.
///
/// Per replicate and claim, men's human and man-conditioned LLM scores are pooled and
/// redrawn with replacement to the original per-source counts; likewise for women.
/// The pooled spread terms are recomputed from the redrawn scores.
pub fn rq1_replicates(
    grouped: &GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
    settings: &BootstrapSettings,
) -> Result<BootstrapRun, StatsError> {
    settings.validate()?;
    let observed = topic_divergence(grouped, topic, variant, settings.variance)?;
    let claims: Vec<Rq1Claim> = observed
        .included
        .iter()
        .map(|id| {
            let c = rq1_cells(grouped, id, variant).expect("included claims have all cells");
            Rq1Claim {
                key: stable_hash(id),
                men_pool: [c.human_man, c.llm_man].concat(),
                women_pool: [c.human_woman, c.llm_woman].concat(),
                counts: [
                    c.human_man.len(),
                    c.llm_man.len(),
                    c.human_woman.len(),
                    c.llm_woman.len(),
                ],
            }
        })
        .collect();
    let seed = settings.seed;
    let variance = settings.variance;
    let replicates = run_replicates(settings.iterations, |b, s| {
        let total: f64 = claims
            .iter()
            .map(|c| {
                draw(&c.men_pool, c.counts[0], &mut substream(seed, b, c.key, 0), &mut s.a);
                draw(&c.men_pool, c.counts[1], &mut substream(seed, b, c.key, 1), &mut s.b);
                draw(&c.women_pool, c.counts[2], &mut substream(seed, b, c.key, 2), &mut s.c);
                draw(&c.women_pool, c.counts[3], &mut substream(seed, b, c.key, 3), &mut s.d);
                claim_statistic(&s.a, &s.c, &s.b, &s.d, variance)
            })
            .sum();
        total / claims.len() as f64
    });
    let p = p_value(&replicates, observed.value, settings.inequality);
    Ok(BootstrapRun {
        observed: observed.value,
        replicates,
        result: TopicResult {
            topic: topic.clone(),
            statistic_kind: StatisticKind::GenderGap,
            value: observed.value,
            p_value: p,
            iterations: settings.iterations,
            seed,
            mse_man: None,
            mse_woman: None,
            prompt_variant: variant,
            included_claims: observed.included,
            excluded_claims: observed.excluded,
        },
    })
}

pub fn rq1_bootstrap(
    grouped: &GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
    settings: &BootstrapSettings,
) -> Result<TopicResult, StatsError> {
    rq1_replicates(grouped, topic, variant, settings).map(|r| r.result)
}

struct Rq2Claim {
    key: u64,
    pool: Vec<f64>,
    n_man: usize,
    n_woman: usize,
    base_mean: f64,
}

/// Alignment-gap test for one topic and prompt variant.
///
/// Per replicate and claim, men's and women's human scores are pooled and redrawn to
/// the original per-gender counts; the base-prompt LLM mean stays fixed.
pub fn rq2_replicates(
    grouped: &GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
    settings: &BootstrapSettings,
) -> Result<BootstrapRun, StatsError> {
    settings.validate()?;
    let gap = alignment_gap(grouped, topic, variant)?;
    let claims: Vec<Rq2Claim> = gap
        .included
        .iter()
        .map(|id| {
            let c = rq2_cells(grouped, id, variant).expect("included claims have all cells");
            Rq2Claim {
                key: stable_hash(id),
                pool: [c.human_man, c.human_woman].concat(),
                n_man: c.human_man.len(),
                n_woman: c.human_woman.len(),
                base_mean: mean(c.base),
            }
        })
        .collect();
    let form = settings.rq2_form;
    let statistic = move |mse_man: f64, mse_woman: f64| match form {
        Rq2Form::Absolute => (mse_woman - mse_man).abs(),
        Rq2Form::Signed => mse_man - mse_woman,
    };
    let observed = statistic(gap.mse_man, gap.mse_woman);
    let seed = settings.seed;
    let n = claims.len() as f64;
    let replicates = run_replicates(settings.iterations, |b, s| {
        let (mut sm, mut sw) = (0.0, 0.0);
        for c in &claims {
            draw(&c.pool, c.n_man, &mut substream(seed, b, c.key, 0), &mut s.a);
            draw(&c.pool, c.n_woman, &mut substream(seed, b, c.key, 1), &mut s.b);
            sm += (mean(&s.a) - c.base_mean).powi(2);
            sw += (mean(&s.b) - c.base_mean).powi(2);
        }
        statistic(sm / n, sw / n)
    });
    let p = p_value(&replicates, observed, settings.inequality);
    Ok(BootstrapRun {
        observed,
        replicates,
        result: TopicResult {
            topic: topic.clone(),
            statistic_kind: StatisticKind::Alignment,
            value: gap.value,
            p_value: p,
            iterations: settings.iterations,
            seed,
            mse_man: Some(gap.mse_man),
            mse_woman: Some(gap.mse_woman),
            prompt_variant: variant,
            included_claims: gap.included,
            excluded_claims: gap.excluded,
        },
    })
}

pub fn rq2_bootstrap(
    grouped: &GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
    settings: &BootstrapSettings,
) -> Result<TopicResult, StatsError> {
    rq2_replicates(grouped, topic, variant, settings).map(|r| r.result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Gender, LlmCondition};
    use crate::stats::Cell;

    fn constant_topic() -> GroupedScores {
        let v = PromptVariant::One;
        let cells = [
            Cell::Human(Gender::Man),
            Cell::Human(Gender::Woman),
            Cell::Llm(LlmCondition::ManConditioned, v),
            Cell::Llm(LlmCondition::WomanConditioned, v),
            Cell::Llm(LlmCondition::Base, v),
        ];
        GroupedScores::from_cells(
            ["a", "b"]
                .iter()
                .flat_map(|c| cells.iter().map(move |cell| (c.to_string(), Topic::Gold, *cell, vec![0.0; 3]))),
        )
    }

    fn settings(inequality: Inequality) -> BootstrapSettings {
        BootstrapSettings {
            iterations: 500,
            seed: 11,
            inequality,
            ..Default::default()
        }
    }

    #[test]
    fn degenerate_data_exposes_inequality_choice() {
        let g = constant_topic();
        let v = PromptVariant::One;
        let strict = rq1_bootstrap(&g, &Topic::Gold, v, &settings(Inequality::Strict)).unwrap();
        let loose = rq1_bootstrap(&g, &Topic::Gold, v, &settings(Inequality::NonStrict)).unwrap();
        assert_eq!(strict.value, 0.0);
        assert_eq!(strict.p_value, 0.0);
        assert_eq!(loose.p_value, 1.0);

        let r2 = rq2_bootstrap(&g, &Topic::Gold, v, &settings(Inequality::NonStrict)).unwrap();
        assert_eq!(r2.value, 0.0);
        assert_eq!(r2.p_value, 1.0);
        assert_eq!(r2.mse_man, Some(0.0));
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let v = PromptVariant::One;
        let g = GroupedScores::from_cells(vec![
            ("a".into(), Topic::Usa, Cell::Human(Gender::Man), vec![-1.0, 0.3, 0.9]),
            ("a".into(), Topic::Usa, Cell::Human(Gender::Woman), vec![1.2, -0.4]),
            ("a".into(), Topic::Usa, Cell::Llm(LlmCondition::ManConditioned, v), vec![-1.5, -1.5, 0.2]),
            ("a".into(), Topic::Usa, Cell::Llm(LlmCondition::WomanConditioned, v), vec![1.5, 1.1]),
            ("a".into(), Topic::Usa, Cell::Llm(LlmCondition::Base, v), vec![0.1, 0.1, 0.1, 0.0, 0.2]),
        ]);
        let s = BootstrapSettings {
            iterations: 2000,
            seed: 99,
            ..Default::default()
        };
        let a = rq1_replicates(&g, &Topic::Usa, v, &s).unwrap();
        let b = rq1_replicates(&g, &Topic::Usa, v, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates.len(), 2000);
        let c = rq2_replicates(&g, &Topic::Usa, v, &s).unwrap();
        let d = rq2_replicates(&g, &Topic::Usa, v, &s).unwrap();
        assert_eq!(c.result.p_value.to_bits(), d.result.p_value.to_bits());
        let other = rq1_bootstrap(&g, &Topic::Usa, v, &BootstrapSettings { seed: 100, ..s }).unwrap();
        assert_ne!(other.p_value.to_bits(), a.result.p_value.to_bits());
    }

    #[test]
    fn zero_iterations_rejected() {
        let g = constant_topic();
        let s = BootstrapSettings {
            iterations: 0,
            ..Default::default()
        };
        assert!(matches!(
            rq1_bootstrap(&g, &Topic::Gold, PromptVariant::One, &s),
            Err(StatsError::InvalidSettings(_))
        ));
    }

    #[test]
    fn tie_tolerance() {
        assert!(exceeds(1.0 - 1e-15, 1.0, Inequality::NonStrict));
        assert!(!exceeds(1.0 + 1e-15, 1.0, Inequality::Strict));
        assert!(exceeds(1.1, 1.0, Inequality::Strict));
        assert!(!exceeds(0.9, 1.0, Inequality::NonStrict));
    }
}
