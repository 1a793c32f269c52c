//! Domain records shared across the pipeline: claims, annotators, annotations and
//! the per-topic statistic results.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Parse failure for one of the enumerated fields.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid {kind} value `{value}`")]
pub struct ParseEnumError {
    pub kind: &'static str,
    pub value: String,
}

impl ParseEnumError {
    fn new(kind: &'static str, value: &str) -> Self {
        Self {
            kind,
            value: value.to_string(),
        }
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "SCREAMING_SNAKE_CASE")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ParseEnumError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let t = s.trim();
                $(if t.eq_ignore_ascii_case($label) {
                    return Ok($name::$variant);
                })+
                Err(ParseEnumError::new($kind, s))
            }
        }
    };
}

label_enum!(
    /// Fact-check verdict of a claim.
    Veracity, "veracity" { True => "TRUE", False => "FALSE" }
);

label_enum!(
    /// Self-reported gender identity of a human annotator.
    Gender, "gender" {
        Man => "MAN",
        Woman => "WOMAN",
        Nonbinary => "NONBINARY",
        Undisclosed => "UNDISCLOSED",
    }
);

label_enum!(
    /// Who produced an annotation.
    Source, "source" { Human => "HUMAN", Llm => "LLM" }
);

label_enum!(
    /// Prompt conditioning used for an LLM annotation.
    LlmCondition, "condition" {
        ManConditioned => "MAN_CONDITIONED",
        WomanConditioned => "WOMAN_CONDITIONED",
        Base => "BASE",
    }
);

label_enum!(
    /// The four claim-assessment questions annotators answered.
    Dimension, "dimension" {
        Prioritization => "PRIORITIZATION",
        GeneralPublic => "GENERAL_PUBLIC",
        GroupHarm => "GROUP_HARM",
        PerceivedTruth => "PERCEIVED_TRUTH",
    }
);

impl Gender {
    /// The LLM condition that imitates this gender, if one exists.
    pub fn llm_condition(self) -> Option<LlmCondition> {
        match self {
            Gender::Man => Some(LlmCondition::ManConditioned),
            Gender::Woman => Some(LlmCondition::WomanConditioned),
            _ => None,
        }
    }
}

/// Which of the two prompt wordings produced an LLM annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PromptVariant {
    One,
    Two,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 2] = [PromptVariant::One, PromptVariant::Two];

    pub fn number(self) -> u8 {
        match self {
            PromptVariant::One => 1,
            PromptVariant::Two => 2,
        }
    }
}

impl TryFrom<u8> for PromptVariant {
    type Error = ParseEnumError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(PromptVariant::One),
            2 => Ok(PromptVariant::Two),
            _ => Err(ParseEnumError::new("prompt_variant", &v.to_string())),
        }
    }
}

impl From<PromptVariant> for u8 {
    fn from(v: PromptVariant) -> u8 {
        v.number()
    }
}

impl FromStr for PromptVariant {
    type Err = ParseEnumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim()
            .parse::<u8>()
            .map_err(|_| ParseEnumError::new("prompt_variant", s))
            .and_then(PromptVariant::try_from)
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Claim topic. The ten dataset topics are named; anything else is carried verbatim.
///
/// Ordering follows the report layout: the four topics expected to split by gender
/// first, then the remaining named topics, then unknown labels alphabetically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Topic {
    Abortion,
    BlackAmericans,
    IllegalImmigration,
    Lgbtq,
    Entertainment,
    Gold,
    HealthScience,
    Sports,
    Usa,
    WeatherClimate,
    Other(String),
}

impl Topic {
    pub const NAMED: [Topic; 10] = [
        Topic::Abortion,
        Topic::BlackAmericans,
        Topic::IllegalImmigration,
        Topic::Lgbtq,
        Topic::Entertainment,
        Topic::Gold,
        Topic::HealthScience,
        Topic::Sports,
        Topic::Usa,
        Topic::WeatherClimate,
    ];

    pub fn label(&self) -> &str {
        match self {
            Topic::Abortion => "Abortion",
            Topic::BlackAmericans => "Black Americans",
            Topic::IllegalImmigration => "Illegal Immigration",
            Topic::Lgbtq => "LGBTQ",
            Topic::Entertainment => "Entertainment",
            Topic::Gold => "Gold",
            Topic::HealthScience => "HealthScience",
            Topic::Sports => "Sports",
            Topic::Usa => "USA",
            Topic::WeatherClimate => "WeatherClimate",
            Topic::Other(s) => s,
        }
    }

    /// Topics where a gender split in opinion was anticipated.
    pub fn is_diverse(&self) -> bool {
        matches!(
            self,
            Topic::Abortion | Topic::BlackAmericans | Topic::IllegalImmigration | Topic::Lgbtq
        )
    }

    pub fn parse(s: &str) -> Topic {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "abortion" => Topic::Abortion,
            "blackamericans" => Topic::BlackAmericans,
            "illegalimmigration" => Topic::IllegalImmigration,
            "lgbtq" => Topic::Lgbtq,
            "entertainment" => Topic::Entertainment,
            "gold" => Topic::Gold,
            "healthscience" | "healthandscience" => Topic::HealthScience,
            "sports" => Topic::Sports,
            "usa" => Topic::Usa,
            "weatherclimate" | "weatherandclimate" => Topic::WeatherClimate,
            _ => Topic::Other(s.trim().to_string()),
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl TryFrom<String> for Topic {
    type Error = ParseEnumError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.trim().is_empty() {
            return Err(ParseEnumError::new("topic", &s));
        }
        Ok(Topic::parse(&s))
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> String {
        t.label().to_string()
    }
}

/// A 1-6 Likert rating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Rating(u8);

impl Rating {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 6;

    pub fn new(v: u8) -> Option<Rating> {
        (Self::MIN..=Self::MAX).contains(&v).then_some(Rating(v))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Rating {
    type Error = ParseEnumError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Rating::new(v).ok_or_else(|| ParseEnumError::new("rating", &v.to_string()))
    }
}

impl From<Rating> for u8 {
    fn from(r: Rating) -> u8 {
        r.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: String,
    pub text: String,
    pub topic: Topic,
    pub veracity: Veracity,
    pub is_gold: bool,
    pub checked_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: String,
    pub gender: Gender,
    pub age_range: Option<String>,
    pub education: Option<String>,
    pub sexual_orientation: Option<String>,
    pub race: Option<String>,
}

/// Producer of an annotation. Human ratings carry the annotator and their gender;
/// LLM ratings carry the prompt conditioning and wording.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rater {
    Human {
        worker_id: String,
        gender: Gender,
    },
    Llm {
        condition: LlmCondition,
        variant: PromptVariant,
    },
}

impl Rater {
    pub fn source(&self) -> Source {
        match self {
            Rater::Human { .. } => Source::Human,
            Rater::Llm { .. } => Source::Llm,
        }
    }

    pub fn worker_id(&self) -> Option<&str> {
        match self {
            Rater::Human { worker_id, .. } => Some(worker_id),
            Rater::Llm { .. } => None,
        }
    }

    pub fn variant(&self) -> Option<PromptVariant> {
        match self {
            Rater::Human { .. } => None,
            Rater::Llm { variant, .. } => Some(*variant),
        }
    }

    /// Condition column value: the annotator's gender or the LLM conditioning.
    pub fn condition_label(&self) -> &'static str {
        match self {
            Rater::Human { gender, .. } => gender.as_str(),
            Rater::Llm { condition, .. } => condition.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub claim_id: String,
    pub rater: Rater,
    pub dimension: Dimension,
    pub rating: Rating,
    /// Free-text groups named as harmed; only meaningful for [`Dimension::GroupHarm`].
    pub harmed_groups: Option<Vec<String>>,
}

/// A z-scored rating, pointing back at the annotation it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScore {
    /// Index into the annotation slice that was normalized.
    pub annotation_ref: usize,
    pub z: f64,
    pub group_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StatisticKind {
    /// Topic-mean exaggeration of the gender gap by gender-conditioned prompts.
    #[serde(rename = "E_HAT")]
    GenderGap,
    /// Absolute difference between women's and men's MSE against base prompts.
    #[serde(rename = "D_HAT")]
    Alignment,
}

/// Why a claim was left out of a topic statistic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedClaim {
    pub claim_id: String,
    pub missing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicResult {
    pub topic: Topic,
    pub statistic_kind: StatisticKind,
    pub value: f64,
    pub p_value: f64,
    #[serde(rename = "B")]
    pub iterations: u32,
    pub seed: u64,
    pub mse_man: Option<f64>,
    pub mse_woman: Option<f64>,
    pub prompt_variant: PromptVariant,
    pub included_claims: Vec<String>,
    pub excluded_claims: Vec<ExcludedClaim>,
}
