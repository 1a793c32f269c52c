use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::{AuditConfig, ConfigError, LlmSource};
use super::{
    export_figure_data, figure_csv, kind_name, AuditReport, CoverageSummary, DatasetSummary,
    SettingsEcho,
};
use crate::collect::{
    merge_llm_annotations, plan_collection, Clock, CollectError, CollectionOutput, Collector,
    DisabledProvider, FixedClock, MockFallback, MockProvider, MockScriptError, Provider,
    ProviderKind, ResponseCache, SystemClock,
};
use crate::dataset::{PromptVariant, StatisticKind, Topic, TopicResult};
use crate::ingest::{
    dedupe, filter_workers, load_dataset, load_dataset_dir, write_dataset, DatasetBundle,
    FilterReport, IngestError,
};
use crate::prompt::{PromptError, TemplateSet};
use crate::stats::{rq1_bootstrap, rq2_bootstrap, GroupedScores, StatsError};

pub const CLEAN_DIR: &str = "clean";
pub const ANNOTATED_DIR: &str = "annotated";
pub const DATASET_SUMMARY: &str = "dataset_summary.json";
pub const FILTER_REPORT: &str = "filter_report.json";
pub const COLLECTION_RECORDS: &str = "collection_records.jsonl";
pub const COVERAGE: &str = "coverage.json";
pub const GENDER_GAP: &str = "gender_gap.json";
pub const ALIGNMENT: &str = "alignment.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const FIGURE_DATA: &str = "figure_data.csv";
pub const SETTINGS: &str = "settings.json";
pub const LOCK_FILE: &str = ".claimaudit.lock";

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("prompt templates: {0}")]
    Templates(#[from] PromptError),
    #[error(transparent)]
    MockScript(#[from] MockScriptError),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("provider kind {0:?} is not available in this build")]
    ProviderUnavailable(ProviderKind),
    #[error("{} is locked by another run (remove {} if it is stale)", dir.display(), lock.display())]
    Locked { dir: PathBuf, lock: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {message}", path.display())]
    Intermediate { path: PathBuf, message: String },
}

impl AuditError {
    /// 1 for invalid input or configuration, 2 for provider failures, 3 for
    /// incomplete LLM coverage.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Collect(CollectError::CoverageGap { .. }) => 3,
            AuditError::Collect(
                CollectError::ProviderUnreachable(_)
                | CollectError::RateLimited(_)
                | CollectError::Cache(_),
            )
            | AuditError::MissingApiKey(_)
            | AuditError::ProviderUnavailable(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AuditError + '_ {
    move |source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), AuditError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AuditError> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_file(path, &s)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, AuditError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| AuditError::Intermediate {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, AuditError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(AuditError::Locked {
                dir: dir.to_path_buf(),
                lock: path,
            }),
            Err(e) => Err(AuditError::Io { path, source: e }),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Cleaned dataset and the bookkeeping of how it was cleaned.
#[derive(Debug, Clone)]
pub struct IngestStage {
    pub bundle: DatasetBundle,
    pub loaded_annotations: usize,
    pub deduped_annotations: usize,
    pub filter: Option<FilterReport>,
}

/// Loads the configured tables, drops duplicate ratings and filters workers on gold
/// accuracy.
pub fn ingest_stage(cfg: &AuditConfig) -> Result<IngestStage, AuditError> {
    let (c, w, a) = cfg.dataset.paths()?;
    let mut bundle = load_dataset(&c, &w, &a)?;
    bundle.provenance.loaded_at = None;
    let loaded_annotations = bundle.annotations.len();
    if cfg.filter.dedupe {
        bundle = dedupe(&bundle);
    }
    let deduped_annotations = bundle.annotations.len();
    let filter = if cfg.filter.enabled {
        let (filtered, report) = filter_workers(&bundle, cfg.filter.threshold, cfg.gold_rule());
        bundle = filtered;
        Some(report)
    } else {
        None
    };
    Ok(IngestStage {
        bundle,
        loaded_annotations,
        deduped_annotations,
        filter,
    })
}

pub struct CollectStage {
    pub bundle: DatasetBundle,
    pub output: Option<CollectionOutput>,
}

impl CollectStage {
    pub fn coverage(&self) -> CoverageSummary {
        match &self.output {
            Some(o) => CoverageSummary {
                planned: o.planned,
                collected: o.annotations.len(),
                gaps: o.gaps.clone(),
            },
            None => CoverageSummary::default(),
        }
    }
}

fn build_provider(cfg: &AuditConfig) -> Result<Box<dyn Provider>, AuditError> {
    let p = &cfg.provider;
    Ok(match p.kind {
        ProviderKind::Mock => match &p.mock_script {
            Some(path) => Box::new(MockProvider::from_path(path, p.mock_seed)?),
            None => Box::new(MockProvider::new(MockFallback::Seeded(p.mock_seed))),
        },
        ProviderKind::CacheOnly => Box::new(DisabledProvider::default()),
        #[cfg(feature = "http")]
        ProviderKind::Http => {
            let key = std::env::var(&p.api_key_env)
                .map_err(|_| AuditError::MissingApiKey(p.api_key_env.clone()))?;
            Box::new(crate::collect::HttpProvider::new(
                &p.endpoint,
                Some(key),
                std::time::Duration::from_secs(p.timeout_secs),
            ))
        }
        #[cfg(not(feature = "http"))]
        ProviderKind::Http => return Err(AuditError::ProviderUnavailable(ProviderKind::Http)),
    })
}

fn templates(cfg: &AuditConfig) -> Result<TemplateSet, AuditError> {
    match &cfg.output.templates {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            Ok(TemplateSet::from_toml(&text)?)
        }
        None => Ok(TemplateSet::default()),
    }
}

/// Gathers count-matched LLM annotations for the configured dimension and variants,
/// or passes the dataset through when it already carries them. Coverage gaps are
/// returned in the output, not raised.
pub fn collect_stage(cfg: &AuditConfig, bundle: &DatasetBundle) -> Result<CollectStage, AuditError> {
    if cfg.analysis.llm_source == LlmSource::Dataset {
        return Ok(CollectStage {
            bundle: bundle.clone(),
            output: None,
        });
    }
    let provider = build_provider(cfg)?;
    let cache = match &cfg.output.cache {
        Some(path) => ResponseCache::open(path).map_err(CollectError::from)?,
        None => ResponseCache::in_memory(),
    };
    let templates = templates(cfg)?;
    let fixed;
    let clock: &dyn Clock = match cfg.output.fixed_clock_ms {
        Some(ms) => {
            fixed = FixedClock(ms);
            &fixed
        }
        None => &SystemClock,
    };
    let plan = plan_collection(bundle, cfg.analysis.dimension, &cfg.analysis.variants);
    let collector = Collector {
        provider: provider.as_ref(),
        cache: &cache,
        config: &cfg.provider,
        templates: &templates,
        clock,
    };
    let output = collector.collect(&plan, &bundle.claims)?;
    let merged = merge_llm_annotations(bundle, cfg.analysis.dimension, &output.annotations);
    Ok(CollectStage {
        bundle: bundle.with_annotations(merged)?,
        output: Some(output),
    })
}

/// A topic and variant for which a test could not run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedTopic {
    pub topic: Topic,
    pub prompt_variant: PromptVariant,
    pub test: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub results: Vec<TopicResult>,
    pub skipped: Vec<SkippedTopic>,
    pub warnings: Vec<String>,
}

pub fn normalize(cfg: &AuditConfig, bundle: &DatasetBundle) -> GroupedScores {
    GroupedScores::from_bundle(bundle, cfg.analysis.dimension, cfg.analysis.normalization)
}

/// Runs one significance test for every topic and prompt variant. Topics without a
/// single complete claim are listed as skipped.
pub fn analyze(
    cfg: &AuditConfig,
    grouped: &GroupedScores,
    kind: StatisticKind,
) -> Result<AnalysisOutput, AuditError> {
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for &variant in &cfg.analysis.variants {
        for topic in grouped.topics() {
            let r = match kind {
                StatisticKind::GenderGap => rq1_bootstrap(grouped, &topic, variant, &cfg.bootstrap),
                StatisticKind::Alignment => rq2_bootstrap(grouped, &topic, variant, &cfg.bootstrap),
            };
            match r {
                Ok(r) => results.push(r),
                Err(e @ StatsError::EmptyTopic { .. }) => skipped.push(SkippedTopic {
                    topic,
                    prompt_variant: variant,
                    test: kind_name(kind).into(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e.into()),
            }
        }
    }
    results.sort_by(|a, b| (&a.topic, a.prompt_variant).cmp(&(&b.topic, b.prompt_variant)));
    skipped.sort_by(|a, b| (&a.topic, a.prompt_variant).cmp(&(&b.topic, b.prompt_variant)));
    Ok(AnalysisOutput {
        results,
        skipped,
        warnings: grouped.warnings.iter().map(|w| w.to_string()).collect(),
    })
}

fn settings_echo(cfg: &AuditConfig) -> SettingsEcho {
    SettingsEcho {
        dimension: cfg.analysis.dimension,
        variants: cfg.analysis.variants.clone(),
        normalization: cfg.analysis.normalization,
        bootstrap: cfg.bootstrap,
        filter_threshold: cfg.filter.enabled.then_some(cfg.filter.threshold),
        gold_true_max: cfg.filter.gold_true_max,
        llm_source: cfg.analysis.llm_source,
        provider: match cfg.provider.kind {
            ProviderKind::Mock => "mock",
            ProviderKind::Http => "http",
            ProviderKind::CacheOnly => "cache_only",
        }
        .into(),
        model: cfg.provider.model.clone(),
        temperature: cfg.provider.temperature,
        max_retries: cfg.provider.max_retries,
    }
}

/// A finished (or partially finished) audit.
#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub report: AuditReport,
    pub output_dir: PathBuf,
}

impl AuditOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.incomplete {
            3
        } else {
            0
        }
    }
}

/// An output directory held under lock, with one method per pipeline step. Each
/// step reads the files the previous step wrote, so steps can run in separate
/// invocations.
pub struct Workspace<'a> {
    pub cfg: &'a AuditConfig,
    pub dir: PathBuf,
    _lock: OutputLock,
}

impl<'a> Workspace<'a> {
    pub fn open(cfg: &'a AuditConfig) -> Result<Self, AuditError> {
        let dir = cfg.output.dir.clone();
        let lock = OutputLock::acquire(&dir)?;
        Ok(Self {
            cfg,
            dir,
            _lock: lock,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn load_dir(&self, name: &str, step: &str) -> Result<DatasetBundle, AuditError> {
        let dir = self.path(name);
        if !dir.is_dir() {
            return Err(AuditError::Intermediate {
                path: dir,
                message: format!("missing; run `{step}` first"),
            });
        }
        Ok(load_dataset_dir(&dir)?)
    }

    fn load_intermediate<T: DeserializeOwned>(&self, name: &str, step: &str) -> Result<T, AuditError> {
        let path = self.path(name);
        if !path.exists() {
            return Err(AuditError::Intermediate {
                path,
                message: format!("missing; run `{step}` first"),
            });
        }
        read_json(&path)
    }

    pub fn ingest(&self) -> Result<IngestStage, AuditError> {
        let stage = ingest_stage(self.cfg)?;
        write_dataset(&stage.bundle, &self.path(CLEAN_DIR))?;
        write_json(&self.path(DATASET_SUMMARY), &DatasetSummary::from_filter(&stage))?;
        if let Some(f) = &stage.filter {
            write_json(&self.path(FILTER_REPORT), f)?;
        }
        Ok(stage)
    }

    pub fn collect(&self) -> Result<CollectStage, AuditError> {
        let clean = self.load_dir(CLEAN_DIR, "ingest")?;
        let stage = collect_stage(self.cfg, &clean)?;
        write_dataset(&stage.bundle, &self.path(ANNOTATED_DIR))?;
        let records = self.path(COLLECTION_RECORDS);
        let mut w = BufWriter::new(File::create(&records).map_err(io_err(&records))?);
        for r in stage.output.iter().flat_map(|o| &o.records) {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(w, "{line}").map_err(io_err(&records))?;
        }
        w.flush().map_err(io_err(&records))?;
        write_json(&self.path(COVERAGE), &stage.coverage())?;
        Ok(stage)
    }

    pub fn analyze(&self, kind: StatisticKind) -> Result<AnalysisOutput, AuditError> {
        let bundle = self.load_dir(ANNOTATED_DIR, "collect")?;
        let out = analyze(self.cfg, &normalize(self.cfg, &bundle), kind)?;
        let name = match kind {
            StatisticKind::GenderGap => GENDER_GAP,
            StatisticKind::Alignment => ALIGNMENT,
        };
        write_json(&self.path(name), &out)?;
        Ok(out)
    }

    /// Assembles the report from the persisted steps and writes the text, JSON,
    /// figure data and settings files.
    pub fn report(&self) -> Result<AuditOutcome, AuditError> {
        let dataset: DatasetSummary = self.load_intermediate(DATASET_SUMMARY, "ingest")?;
        let coverage: CoverageSummary = self.load_intermediate(COVERAGE, "collect")?;
        let gap: AnalysisOutput = self.load_intermediate(GENDER_GAP, "analyze-rq1")?;
        let alignment: AnalysisOutput = self.load_intermediate(ALIGNMENT, "analyze-rq2")?;
        let bundle = self.load_dir(ANNOTATED_DIR, "collect")?;
        let grouped = normalize(self.cfg, &bundle);

        let mut warnings = gap.warnings.clone();
        warnings.extend(alignment.warnings.iter().cloned());
        warnings.sort();
        warnings.dedup();
        let mut skipped = gap.skipped;
        skipped.extend(alignment.skipped);
        let report = AuditReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            incomplete: !coverage.gaps.is_empty(),
            dataset,
            settings: settings_echo(self.cfg),
            coverage,
            gender_gap: gap.results,
            alignment: alignment.results,
            skipped,
            warnings,
        };
        write_file(&self.path(REPORT_JSON), &report.to_json())?;
        write_file(&self.path(REPORT_TEXT), &report.render_text())?;
        let figure = export_figure_data(&grouped, self.cfg.analysis.dimension);
        write_file(&self.path(FIGURE_DATA), &figure_csv(&figure))?;
        write_json(&self.path(SETTINGS), self.cfg)?;
        Ok(AuditOutcome {
            report,
            output_dir: self.dir.clone(),
        })
    }
}

/// Full pipeline: ingest, filter, plan, collect, normalize, both tests, render.
/// Coverage gaps do not abort the run; the report is marked incomplete and the
/// outcome's exit code is 3.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditOutcome, AuditError> {
    cfg.validate()?;
    let ws = Workspace::open(cfg)?;
    ws.ingest()?;
    ws.collect()?;
    ws.analyze(StatisticKind::GenderGap)?;
    ws.analyze(StatisticKind::Alignment)?;
    ws.report()
}
