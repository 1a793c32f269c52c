use crate::dataset::{ExcludedClaim, Gender, LlmCondition, PromptVariant, Topic};

use super::{mean, pooled_variance, Cell, GroupedScores, StatsError, TopicStatistic, VarianceConvention};

/// The four z-score cells of one claim that the gender-gap statistic reads.
#[derive(Debug, Clone, Copy)]
pub struct Rq1Cells<'a> {
    pub human_man: &'a [f64],
    pub human_woman: &'a [f64],
    pub llm_man: &'a [f64],
    pub llm_woman: &'a [f64],
}

/// Gender-gap exaggeration for one claim:
///
/// `(|mean(llm_woman) - mean(llm_man)| - |mean(human_woman) - mean(human_man)|)
///  / sqrt(1 + var(human) + var(llm))`
///
/// where `var(human)` pools both human cells and `var(llm)` both conditioned LLM cells.
/// All four slices must be non-empty.
pub fn claim_statistic(
    human_man: &[f64],
    human_woman: &[f64],
    llm_man: &[f64],
    llm_woman: &[f64],
    variance: VarianceConvention,
) -> f64 {
    let llm_gap = (mean(llm_woman) - mean(llm_man)).abs();
    let human_gap = (mean(human_woman) - mean(human_man)).abs();
    let spread = 1.0
        + pooled_variance(human_man, human_woman, variance)
        + pooled_variance(llm_man, llm_woman, variance);
    (llm_gap - human_gap) / spread.sqrt()
}

impl Rq1Cells<'_> {
    pub fn statistic(&self, variance: VarianceConvention) -> f64 {
        claim_statistic(
            self.human_man,
            self.human_woman,
            self.llm_man,
            self.llm_woman,
            variance,
        )
    }
}

pub fn rq1_cells<'a>(
    grouped: &'a GroupedScores,
    claim_id: &str,
    variant: PromptVariant,
) -> Result<Rq1Cells<'a>, StatsError> {
    let get = |cell: Cell| {
        let v = grouped.cell(claim_id, cell);
        if v.is_empty() {
            Err(StatsError::MissingCell {
                claim_id: claim_id.to_string(),
                cell: cell.to_string(),
            })
        } else {
            Ok(v)
        }
    };
    Ok(Rq1Cells {
        human_man: get(Cell::Human(Gender::Man))?,
        human_woman: get(Cell::Human(Gender::Woman))?,
        llm_man: get(Cell::Llm(LlmCondition::ManConditioned, variant))?,
        llm_woman: get(Cell::Llm(LlmCondition::WomanConditioned, variant))?,
    })
}

/// Claim-level gender-gap statistic for the LLM annotations of one prompt variant.
pub fn claim_divergence(
    grouped: &GroupedScores,
    claim_id: &str,
    variant: PromptVariant,
    variance: VarianceConvention,
) -> Result<f64, StatsError> {
    rq1_cells(grouped, claim_id, variant).map(|c| c.statistic(variance))
}

/// Splits a topic's claims into those with all cells present and those without.
pub(crate) fn partition_claims<'a, T>(
    grouped: &'a GroupedScores,
    topic: &Topic,
    mut cells: impl FnMut(&str) -> Result<T, StatsError>,
) -> (Vec<(&'a str, T)>, Vec<ExcludedClaim>) {
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for claim in grouped.claims_in(topic) {
        match cells(claim) {
            Ok(c) => included.push((claim, c)),
            Err(StatsError::MissingCell { claim_id, cell }) => excluded.push(ExcludedClaim {
                claim_id,
                missing: cell,
            }),
            Err(e) => unreachable!("cell lookup only fails with MissingCell: {e}"),
        }
    }
    (included, excluded)
}

/// Mean of the claim statistic over the topic's claims that have every cell.
pub fn topic_divergence(
    grouped: &GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
    variance: VarianceConvention,
) -> Result<TopicStatistic, StatsError> {
    let (included, excluded) = partition_claims(grouped, topic, |c| rq1_cells(grouped, c, variant));
    if included.is_empty() {
        return Err(StatsError::EmptyTopic {
            topic: topic.to_string(),
            excluded,
        });
    }
    let value = included
        .iter()
        .map(|(_, c)| c.statistic(variance))
        .sum::<f64>()
        / included.len() as f64;
    Ok(TopicStatistic {
        value,
        included: included.into_iter().map(|(c, _)| c.to_string()).collect(),
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: VarianceConvention = VarianceConvention::Population;

    fn rq1_claim(id: &str, topic: Topic, hm: &[f64], hw: &[f64], lm: &[f64], lw: &[f64]) -> Vec<(String, Topic, Cell, Vec<f64>)> {
        let v = PromptVariant::One;
        vec![
            (id.into(), topic.clone(), Cell::Human(Gender::Man), hm.to_vec()),
            (id.into(), topic.clone(), Cell::Human(Gender::Woman), hw.to_vec()),
            (id.into(), topic.clone(), Cell::Llm(LlmCondition::ManConditioned, v), lm.to_vec()),
            (id.into(), topic, Cell::Llm(LlmCondition::WomanConditioned, v), lw.to_vec()),
        ]
    }

    #[test]
    fn hand_derived_example() {
        let e = claim_statistic(&[0.5, 0.5], &[-0.5, -0.5], &[-1.0], &[1.0], P);
        // (2 - 1) / sqrt(1 + 0.25 + 1)
        assert!((e - 1.0 / 2.25f64.sqrt()).abs() < 1e-15);
        assert!((e - 0.6667).abs() < 1e-4);
    }

    #[test]
    fn equal_gaps_cancel() {
        let e = claim_statistic(&[0.25, 0.75], &[1.5], &[-1.0, 0.0], &[0.5], P);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn constant_cells_give_zero() {
        let e = claim_statistic(&[0.3], &[0.3, 0.3], &[0.3], &[0.3], P);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn topic_mean_and_exclusion() {
        let mut entries = rq1_claim("a", Topic::Sports, &[0.5, 0.5], &[-0.5, -0.5], &[-1.0], &[1.0]);
        entries.extend(rq1_claim("b", Topic::Sports, &[0.0], &[0.0], &[0.0], &[0.0]));
        entries.extend(rq1_claim("c", Topic::Sports, &[0.0], &[1.0], &[], &[0.0]));
        entries.extend(rq1_claim("d", Topic::Usa, &[0.0], &[1.0], &[0.0], &[0.0]));
        let g = GroupedScores::from_cells(entries);
        let t = topic_divergence(&g, &Topic::Sports, PromptVariant::One, P).unwrap();
        assert!((t.value - (1.0 / 1.5) / 2.0).abs() < 1e-12);
        assert_eq!(t.included, vec!["a", "b"]);
        assert_eq!(t.excluded.len(), 1);
        assert_eq!(t.excluded[0].claim_id, "c");
        assert_eq!(t.excluded[0].missing, "LLM/P1/MAN_CONDITIONED");

        let single = topic_divergence(&g, &Topic::Usa, PromptVariant::One, P).unwrap();
        assert_eq!(single.value, claim_divergence(&g, "d", PromptVariant::One, P).unwrap());

        assert!(matches!(
            topic_divergence(&g, &Topic::Sports, PromptVariant::Two, P),
            Err(StatsError::EmptyTopic { .. })
        ));
        assert!(matches!(
            claim_divergence(&g, "c", PromptVariant::One, P),
            Err(StatsError::MissingCell { .. })
        ));
    }
}
