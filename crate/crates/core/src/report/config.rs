use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collect::ProviderConfig;
use crate::dataset::{Dimension, PromptVariant};
use crate::ingest::GoldRule;
use crate::stats::{BootstrapSettings, NormalizationPolicy};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
}

/// Where the three input tables live. `dir` supplies `claims.csv`, `workers.csv`
/// and `annotations.csv`; explicit paths override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub dir: Option<PathBuf>,
    pub claims: Option<PathBuf>,
    pub workers: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn paths(&self) -> Result<(PathBuf, PathBuf, PathBuf), ConfigError> {
        let pick = |explicit: &Option<PathBuf>, name: &str| {
            explicit
                .clone()
                .or_else(|| self.dir.as_ref().map(|d| d.join(name)))
                .ok_or_else(|| ConfigError::Parse(format!("dataset: no path for {name}")))
        };
        Ok((
            pick(&self.claims, "claims.csv")?,
            pick(&self.workers, "workers.csv")?,
            pick(&self.annotations, "annotations.csv")?,
        ))
    }
}

/// Where the LLM annotations come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmSource {
    /// Collect them through the configured provider.
    #[default]
    Collect,
    /// Use LLM annotations already present in the dataset.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub dimension: Dimension,
    pub variants: Vec<PromptVariant>,
    pub normalization: NormalizationPolicy,
    pub llm_source: LlmSource,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            dimension: Dimension::GroupHarm,
            variants: PromptVariant::ALL.to_vec(),
            normalization: NormalizationPolicy::Source,
            llm_source: LlmSource::Collect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub enabled: bool,
    /// Workers need gold accuracy strictly above this.
    pub threshold: f64,
    pub gold_true_max: u8,
    pub dedupe: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 0.8,
            gold_true_max: GoldRule::default().true_max,
            dedupe: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Response cache log; kept in memory only when unset.
    pub cache: Option<PathBuf>,
    /// Timestamp stamped on every collection record instead of the wall clock.
    pub fixed_clock_ms: Option<u64>,
    /// Prompt template overrides.
    pub templates: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("audit-out"),
            cache: None,
            fixed_clock_ms: None,
            templates: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub dataset: DatasetConfig,
    pub analysis: AnalysisConfig,
    pub filter: FilterConfig,
    pub bootstrap: BootstrapSettings,
    pub provider: ProviderConfig,
    pub output: OutputConfig,
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: AuditConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.dataset;
        for p in [&mut d.dir, &mut d.claims, &mut d.workers, &mut d.annotations]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output.dir);
        for p in [&mut self.output.cache, &mut self.output.templates, &mut self.provider.mock_script]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.analysis.variants.is_empty() {
            return Err(ConfigError::Parse("analysis.variants is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.filter.threshold) {
            return Err(ConfigError::Parse(format!(
                "filter.threshold must be within [0, 1], got {}",
                self.filter.threshold
            )));
        }
        if !(1..=6).contains(&self.filter.gold_true_max) {
            return Err(ConfigError::Parse("filter.gold_true_max must be within 1..=6".into()));
        }
        self.bootstrap
            .validate()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        self.provider
            .validate()
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn gold_rule(&self) -> GoldRule {
        GoldRule {
            true_max: self.filter.gold_true_max,
        }
    }
}
