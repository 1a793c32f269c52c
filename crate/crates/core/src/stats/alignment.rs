use serde::{Deserialize, Serialize};

use crate::dataset::{ExcludedClaim, Gender, LlmCondition, PromptVariant, Topic};

use super::divergence::partition_claims;
use super::{mean, Cell, GroupedScores, StatsError, TopicStatistic};

/// Human gender cells and neutral-prompt LLM cell of one claim.
#[derive(Debug, Clone, Copy)]
pub struct Rq2Cells<'a> {
    pub human_man: &'a [f64],
    pub human_woman: &'a [f64],
    pub base: &'a [f64],
}

/// Both human gender cells and the base cell are required, so the two gender MSEs
/// always range over the same claims.
pub fn rq2_cells<'a>(
    grouped: &'a GroupedScores,
    claim_id: &str,
    variant: PromptVariant,
) -> Result<Rq2Cells<'a>, StatsError> {
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
    Ok(Rq2Cells {
        human_man: get(Cell::Human(Gender::Man))?,
        human_woman: get(Cell::Human(Gender::Woman))?,
        base: get(Cell::Llm(LlmCondition::Base, variant))?,
    })
}

fn included_cells<'a>(
    grouped: &'a GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
) -> Result<(Vec<(&'a str, Rq2Cells<'a>)>, Vec<ExcludedClaim>), StatsError> {
    let (included, excluded) = partition_claims(grouped, topic, |c| rq2_cells(grouped, c, variant));
    if included.is_empty() {
        return Err(StatsError::EmptyTopic {
            topic: topic.to_string(),
            excluded,
        });
    }
    Ok((included, excluded))
}

/// Mean over claims of the squared gap between `gender`'s mean human z-score and the
/// mean base-prompt LLM z-score. Only men and women are supported.
pub fn gender_mse(
    grouped: &GroupedScores,
    topic: &Topic,
    gender: Gender,
    variant: PromptVariant,
) -> Result<TopicStatistic, StatsError> {
    let pick = match gender {
        Gender::Man => |c: &Rq2Cells<'_>| mean(c.human_man),
        Gender::Woman => |c: &Rq2Cells<'_>| mean(c.human_woman),
        g => {
            return Err(StatsError::InvalidSettings(format!(
                "alignment MSE is defined for MAN and WOMAN, not {g}"
            )))
        }
    };
    let (included, excluded) = included_cells(grouped, topic, variant)?;
    let value = included
        .iter()
        .map(|(_, c)| (pick(c) - mean(c.base)).powi(2))
        .sum::<f64>()
        / included.len() as f64;
    Ok(TopicStatistic {
        value,
        included: included.into_iter().map(|(c, _)| c.to_string()).collect(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentGap {
    /// |mse_woman - mse_man|
    pub value: f64,
    pub mse_man: f64,
    pub mse_woman: f64,
    pub included: Vec<String>,
    pub excluded: Vec<ExcludedClaim>,
}

pub fn alignment_gap(
    grouped: &GroupedScores,
    topic: &Topic,
    variant: PromptVariant,
) -> Result<AlignmentGap, StatsError> {
    let man = gender_mse(grouped, topic, Gender::Man, variant)?;
    let woman = gender_mse(grouped, topic, Gender::Woman, variant)?;
    debug_assert_eq!(man.included, woman.included);
    Ok(AlignmentGap {
        value: (woman.value - man.value).abs(),
        mse_man: man.value,
        mse_woman: woman.value,
        included: man.included,
        excluded: man.excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claim(id: &str, hm: &[f64], hw: &[f64], base: &[f64]) -> Vec<(String, Topic, Cell, Vec<f64>)> {
        vec![
            (id.into(), Topic::Abortion, Cell::Human(Gender::Man), hm.to_vec()),
            (id.into(), Topic::Abortion, Cell::Human(Gender::Woman), hw.to_vec()),
            (
                id.into(),
                Topic::Abortion,
                Cell::Llm(LlmCondition::Base, PromptVariant::One),
                base.to_vec(),
            ),
        ]
    }

    #[test]
    fn mse_example() {
        // man means {0.2, -0.2}, woman means {1, -1}, base means {0, 0}
        let mut e = claim("a", &[0.1, 0.3], &[1.0], &[0.5, -0.5]);
        e.extend(claim("b", &[-0.2], &[-1.0], &[0.0]));
        let g = GroupedScores::from_cells(e);
        let m = gender_mse(&g, &Topic::Abortion, Gender::Man, PromptVariant::One).unwrap();
        assert!((m.value - 0.04).abs() < 1e-12);
        let w = gender_mse(&g, &Topic::Abortion, Gender::Woman, PromptVariant::One).unwrap();
        assert!((w.value - 1.0).abs() < 1e-12);
        assert_eq!(m.included, w.included);
        let d = alignment_gap(&g, &Topic::Abortion, PromptVariant::One).unwrap();
        assert!((d.value - 0.96).abs() < 1e-12);
    }

    #[test]
    fn zero_when_humans_match_base() {
        let g = GroupedScores::from_cells(claim("a", &[0.4, 0.6], &[0.5], &[0.5]));
        let d = alignment_gap(&g, &Topic::Abortion, PromptVariant::One).unwrap();
        assert!(d.mse_man.abs() < 1e-15 && d.mse_woman.abs() < 1e-15);
        assert!(d.value.abs() < 1e-15);
    }

    #[test]
    fn claim_missing_a_gender_is_excluded_for_both() {
        let mut e = claim("a", &[0.2], &[-0.2], &[0.0]);
        e.extend(claim("b", &[0.7], &[], &[0.0]));
        let g = GroupedScores::from_cells(e);
        let m = gender_mse(&g, &Topic::Abortion, Gender::Man, PromptVariant::One).unwrap();
        let w = gender_mse(&g, &Topic::Abortion, Gender::Woman, PromptVariant::One).unwrap();
        assert_eq!(m.included, vec!["a"]);
        assert_eq!(m.included, w.included);
        assert_eq!(m.excluded[0].claim_id, "b");
        assert!(gender_mse(&g, &Topic::Abortion, Gender::Nonbinary, PromptVariant::One).is_err());
        assert!(matches!(
            alignment_gap(&g, &Topic::Sports, PromptVariant::One),
            Err(StatsError::EmptyTopic { .. })
        ));
    }
}
