//! Report assembly and rendering: significance stars, the gender-gap and alignment
//! tables, figure data export and the end-to-end audit pipeline.

mod config;
mod pipeline;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use config::{AnalysisConfig, AuditConfig, ConfigError, DatasetConfig, FilterConfig, LlmSource, OutputConfig};
pub use pipeline::{
    analyze, collect_stage, ingest_stage, normalize, run_audit, AnalysisOutput, AuditError,
    AuditOutcome, CollectStage, IngestStage, OutputLock, SkippedTopic, Workspace,
};
pub use pipeline::{
    ALIGNMENT, ANNOTATED_DIR, CLEAN_DIR, COLLECTION_RECORDS, COVERAGE, DATASET_SUMMARY,
    FIGURE_DATA, FILTER_REPORT, GENDER_GAP, LOCK_FILE, REPORT_JSON, REPORT_TEXT, SETTINGS,
};

use crate::collect::CoverageGap;
use crate::dataset::{Dimension, PromptVariant, Source, StatisticKind, Topic, TopicResult};
use crate::ingest::FilterReport;
use crate::stats::{BootstrapSettings, Cell, GroupedScores, NormalizationPolicy};

/// Table marker for a p-value: `***` below 0.001, `**` below 0.01, `*` below 0.05,
/// `-` otherwise. All thresholds are strict.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "-"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub claims_path: Option<String>,
    pub workers_path: Option<String>,
    pub annotations_path: Option<String>,
    pub claims: usize,
    pub workers: usize,
    pub annotations_loaded: usize,
    pub annotations_after_dedupe: usize,
    pub annotations_after_filter: usize,
    pub removed_workers: Vec<String>,
}

impl DatasetSummary {
    pub fn from_filter(stage: &IngestStage) -> Self {
        let p = &stage.bundle.provenance;
        let show = |x: &Option<std::path::PathBuf>| x.as_ref().map(|p| p.display().to_string());
        Self {
            claims_path: show(&p.claims_path),
            workers_path: show(&p.workers_path),
            annotations_path: show(&p.annotations_path),
            claims: stage.bundle.claims.len(),
            workers: stage.bundle.workers.len(),
            annotations_loaded: stage.loaded_annotations,
            annotations_after_dedupe: stage.deduped_annotations,
            annotations_after_filter: stage.bundle.annotations.len(),
            removed_workers: stage
                .filter
                .as_ref()
                .map(|f: &FilterReport| f.removed_workers.iter().map(|w| w.worker_id.clone()).collect())
                .unwrap_or_default(),
        }
    }
}

/// Analysis settings that shape the numbers in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingsEcho {
    pub dimension: Dimension,
    pub variants: Vec<PromptVariant>,
    pub normalization: NormalizationPolicy,
    pub bootstrap: BootstrapSettings,
    pub filter_threshold: Option<f64>,
    pub gold_true_max: u8,
    pub llm_source: LlmSource,
    pub provider: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub planned: usize,
    pub collected: usize,
    pub gaps: Vec<CoverageGap>,
}

/// Everything the audit found, in a form that serializes deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub tool_version: String,
    /// Set when planned LLM annotations are missing; the numbers then rest on fewer
    /// draws than the human counts they mirror.
    pub incomplete: bool,
    pub dataset: DatasetSummary,
    pub settings: SettingsEcho,
    pub coverage: CoverageSummary,
    pub gender_gap: Vec<TopicResult>,
    pub alignment: Vec<TopicResult>,
    pub skipped: Vec<SkippedTopic>,
    pub warnings: Vec<String>,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    fn variants(&self) -> Vec<PromptVariant> {
        let mut v = self.settings.variants.clone();
        v.sort();
        v.dedup();
        v
    }

    fn topics(&self) -> Vec<Topic> {
        let mut t: Vec<Topic> = self
            .gender_gap
            .iter()
            .chain(&self.alignment)
            .map(|r| r.topic.clone())
            .chain(self.skipped.iter().map(|s| s.topic.clone()))
            .collect();
        t.sort();
        t.dedup();
        t
    }

    /// Plain-text rendering: header, gender-gap table, alignment table, notes.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if self.incomplete {
            let _ = writeln!(
                out,
                "INCOMPLETE: {} of {} planned LLM annotations missing",
                self.coverage.gaps.len(),
                self.coverage.planned
            );
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "claimaudit {} | dimension {} | B = {} | seed {} | {} claims, {} annotations",
            self.tool_version,
            self.settings.dimension,
            self.settings.bootstrap.iterations,
            self.settings.bootstrap.seed,
            self.dataset.claims,
            self.dataset.annotations_after_filter,
        );
        out.push('\n');
        out.push_str("Gender-gap exaggeration (E)\n");
        out.push_str(&render_gap_table(&self.gender_gap, &self.topics(), &self.variants()));
        out.push('\n');
        out.push_str("Alignment with men vs women (MSE against neutral prompt)\n");
        out.push_str(&render_alignment_table(&self.alignment, &self.topics(), &self.variants()));
        if !self.skipped.is_empty() {
            out.push_str("\nSkipped:\n");
            for s in &self.skipped {
                let _ = writeln!(out, "  {} P{} {}: {}", s.topic, s.prompt_variant, s.test, s.reason);
            }
        }
        if !self.coverage.gaps.is_empty() {
            out.push_str("\nCoverage gaps:\n");
            for g in &self.coverage.gaps {
                let _ = writeln!(
                    out,
                    "  {} {} P{} slot {} after {} attempts: {:?}",
                    g.claim_id, g.condition, g.prompt_variant, g.slot, g.attempts, g.last_response
                );
            }
        }
        if !self.warnings.is_empty() {
            out.push_str("\nWarnings:\n");
            for w in &self.warnings {
                let _ = writeln!(out, "  {w}");
            }
        }
        out
    }
}

fn lookup<'a>(
    rows: &'a [TopicResult],
    topic: &Topic,
    variant: PromptVariant,
) -> Option<&'a TopicResult> {
    rows.iter()
        .find(|r| &r.topic == topic && r.prompt_variant == variant)
}

fn grid(header: Vec<String>, sections: Vec<(&str, Vec<Vec<String>>)>) -> String {
    let ncol = header.len();
    let mut width = vec![0usize; ncol];
    for row in std::iter::once(&header).chain(sections.iter().flat_map(|(_, r)| r)) {
        for (i, c) in row.iter().enumerate() {
            width[i] = width[i].max(c.chars().count());
        }
    }
    let total: usize = width.iter().sum::<usize>() + 2 * (ncol - 1);
    let line = |row: &[String]| {
        let mut s = String::new();
        for (i, c) in row.iter().enumerate() {
            if i == 0 {
                let _ = write!(s, "{:<w$}", c, w = width[i]);
            } else {
                let _ = write!(s, "  {:>w$}", c, w = width[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let rule = "-".repeat(total) + "\n";
    let mut out = line(&header);
    for (title, rows) in sections {
        if rows.is_empty() {
            continue;
        }
        out.push_str(&rule);
        let centered = format!("{:^w$}", title, w = total);
        out.push_str(centered.trim_end());
        out.push('\n');
        out.push_str(&rule);
        for r in rows {
            out.push_str(&line(&r));
        }
    }
    out.push_str(&rule);
    out
}

fn split_sections(topics: &[Topic], row: impl Fn(&Topic) -> Vec<String>) -> Vec<(&'static str, Vec<Vec<String>>)> {
    let (diverse, other): (Vec<&Topic>, Vec<&Topic>) = topics.iter().partition(|t| t.is_diverse());
    vec![
        ("Diverse Topics", diverse.into_iter().map(&row).collect()),
        ("Other Topics", other.into_iter().map(&row).collect()),
    ]
}

const NOT_AVAILABLE: &str = "n/a";

/// Topic rows with the gap statistic and its stars per prompt variant, 2 decimals.
pub fn render_gap_table(rows: &[TopicResult], topics: &[Topic], variants: &[PromptVariant]) -> String {
    let mut header = vec!["Topic".to_string()];
    for v in variants {
        header.push(format!("E (Prompt {v})"));
        header.push("Significance".into());
    }
    let sections = split_sections(topics, |t| {
        let mut r = vec![t.label().to_string()];
        for &v in variants {
            match lookup(rows, t, v) {
                Some(x) => {
                    r.push(format!("{:.2}", x.value));
                    r.push(significance_stars(x.p_value).into());
                }
                None => r.extend([NOT_AVAILABLE.to_string(), NOT_AVAILABLE.to_string()]),
            }
        }
        r
    });
    let mut out = grid(header, sections);
    out.push_str("Significance: * p < 0.05, ** p < 0.01, *** p < 0.001\n");
    out
}

/// Topic rows with men's and women's MSE and the gap p-value per prompt variant.
pub fn render_alignment_table(rows: &[TopicResult], topics: &[Topic], variants: &[PromptVariant]) -> String {
    let mut header = vec!["Topic".to_string()];
    for v in variants {
        header.push(format!("MSE men ({v})"));
        header.push(format!("MSE women ({v})"));
        header.push("p-value".into());
    }
    let fmt = |x: Option<f64>| x.map_or(NOT_AVAILABLE.to_string(), |x| format!("{x:.2}"));
    let sections = split_sections(topics, |t| {
        let mut r = vec![t.label().to_string()];
        for &v in variants {
            match lookup(rows, t, v) {
                Some(x) => {
                    r.push(fmt(x.mse_man));
                    r.push(fmt(x.mse_woman));
                    r.push(format!("{:.2}", x.p_value));
                }
                None => r.extend(std::iter::repeat_n(NOT_AVAILABLE.to_string(), 3)),
            }
        }
        r
    });
    grid(header, sections)
}

/// Mean z-score of one (topic, source, condition) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub topic: Topic,
    pub dimension: Dimension,
    pub source: Source,
    /// Worker gender for human rows, LLM condition otherwise.
    pub condition: String,
    pub prompt_variant: Option<PromptVariant>,
    pub mean_z: f64,
    pub claims: usize,
    pub count: usize,
}

/// Per topic and score cell: mean z-score over every score in the cell and how many
/// claims and scores it covers. Claims lacking a cell do not count toward it.
pub fn export_figure_data(grouped: &GroupedScores, dimension: Dimension) -> Vec<FigureRow> {
    let mut acc: BTreeMap<(Topic, Cell), (f64, usize, usize)> = BTreeMap::new();
    for topic in grouped.topics() {
        for claim in grouped.claims_in(&topic) {
            for (cell, zs) in grouped.claim_cells(claim) {
                if zs.is_empty() {
                    continue;
                }
                let e = acc.entry((topic.clone(), cell)).or_default();
                e.0 += zs.iter().sum::<f64>();
                e.1 += 1;
                e.2 += zs.len();
            }
        }
    }
    acc.into_iter()
        .map(|((topic, cell), (sum, claims, count))| {
            let (source, condition, prompt_variant) = match cell {
                Cell::Human(g) => (Source::Human, g.to_string(), None),
                Cell::Llm(c, v) => (Source::Llm, c.to_string(), Some(v)),
            };
            FigureRow {
                topic,
                dimension,
                source,
                condition,
                prompt_variant,
                mean_z: sum / count as f64,
                claims,
                count,
            }
        })
        .collect()
}

pub fn figure_csv(rows: &[FigureRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "topic",
        "dimension",
        "source",
        "condition",
        "prompt_variant",
        "mean_z",
        "claims",
        "count",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.topic.label().to_string(),
            r.dimension.to_string(),
            r.source.to_string(),
            r.condition.clone(),
            r.prompt_variant.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:?}", r.mean_z),
            r.claims.to_string(),
            r.count.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub(crate) fn kind_name(kind: StatisticKind) -> &'static str {
    match kind {
        StatisticKind::GenderGap => "gender_gap",
        StatisticKind::Alignment => "alignment",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Gender, LlmCondition};

    #[test]
    fn stars_thresholds() {
        assert_eq!(significance_stars(0.0005), "***");
        assert_eq!(significance_stars(0.001), "**");
        assert_eq!(significance_stars(0.0099), "**");
        assert_eq!(significance_stars(0.01), "*");
        assert_eq!(significance_stars(0.02), "*");
        assert_eq!(significance_stars(0.05), "-");
        assert_eq!(significance_stars(1.0), "-");
        assert_eq!(significance_stars(0.0), "***");
    }

    fn result(topic: Topic, v: PromptVariant, value: f64, p: f64) -> TopicResult {
        TopicResult {
            topic,
            statistic_kind: StatisticKind::GenderGap,
            value,
            p_value: p,
            iterations: 100,
            seed: 1,
            mse_man: Some(0.864),
            mse_woman: Some(2.158),
            prompt_variant: v,
            included_claims: vec![],
            excluded_claims: vec![],
        }
    }

    #[test]
    fn gap_table_shape() {
        let rows = vec![
            result(Topic::Abortion, PromptVariant::One, 0.5612, 0.0),
            result(Topic::Abortion, PromptVariant::Two, 0.2449, 0.003),
            result(Topic::Sports, PromptVariant::One, -0.031, 0.7),
        ];
        let topics = [Topic::Abortion, Topic::Sports];
        let t = render_gap_table(&rows, &topics, &PromptVariant::ALL);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Topic"));
        assert!(t.contains("Diverse Topics") && t.contains("Other Topics"));
        let abortion = lines.iter().find(|l| l.starts_with("Abortion")).unwrap();
        let cells: Vec<&str> = abortion.split_whitespace().collect();
        assert_eq!(cells, ["Abortion", "0.56", "***", "0.24", "**"]);
        let sports = lines.iter().find(|l| l.starts_with("Sports")).unwrap();
        let cells: Vec<&str> = sports.split_whitespace().collect();
        assert_eq!(cells, ["Sports", "-0.03", "-", "n/a", "n/a"]);
        assert!(t.find("Abortion").unwrap() < t.find("Other Topics").unwrap());
    }

    #[test]
    fn alignment_table_rounds() {
        let rows = vec![result(Topic::Abortion, PromptVariant::One, 1.29, 0.0004)];
        let t = render_alignment_table(&rows, &[Topic::Abortion], &[PromptVariant::One]);
        let line = t.lines().find(|l| l.starts_with("Abortion")).unwrap();
        assert_eq!(line.split_whitespace().collect::<Vec<_>>(), ["Abortion", "0.86", "2.16", "0.00"]);
    }

    #[test]
    fn figure_rows_echo_means() {
        let v = PromptVariant::One;
        let g = GroupedScores::from_cells(vec![
            ("a".to_string(), Topic::Gold, Cell::Human(Gender::Man), vec![1.0, 2.0]),
            ("b".to_string(), Topic::Gold, Cell::Human(Gender::Man), vec![3.0]),
            ("a".to_string(), Topic::Gold, Cell::Human(Gender::Woman), vec![-1.0]),
            ("a".to_string(), Topic::Gold, Cell::Llm(LlmCondition::Base, v), vec![0.5, 0.5]),
        ]);
        let rows = export_figure_data(&g, Dimension::GroupHarm);
        assert_eq!(rows.len(), 3);
        let men = &rows[0];
        assert_eq!((men.condition.as_str(), men.mean_z, men.claims, men.count), ("MAN", 2.0, 2, 3));
        let women = &rows[1];
        assert_eq!((women.mean_z, women.claims, women.count), (-1.0, 1, 1));
        assert_eq!(rows[2].prompt_variant, Some(v));
        let csv = figure_csv(&rows);
        assert!(csv.starts_with("topic,dimension,source,condition,prompt_variant,mean_z,claims,count\n"));
        assert!(csv.contains("Gold,GROUP_HARM,HUMAN,MAN,,2.0,2,3\n"));
    }
}
