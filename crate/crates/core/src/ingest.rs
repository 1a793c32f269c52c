//! Loading, validating and quality-filtering the three-table annotation dataset.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    Annotation, Claim, Dimension, Gender, LlmCondition, PromptVariant, Rater, Rating, Source,
    Topic, Veracity, WorkerProfile,
};

pub const CLAIM_COLUMNS: [&str; 6] = ["claim_id", "text", "topic", "veracity", "is_gold", "checked_date"];
pub const WORKER_COLUMNS: [&str; 6] = [
    "worker_id",
    "gender",
    "age_range",
    "education",
    "sexual_orientation",
    "race",
];
pub const ANNOTATION_COLUMNS: [&str; 8] = [
    "claim_id",
    "source",
    "condition",
    "worker_id",
    "prompt_variant",
    "dimension",
    "rating",
    "harmed_groups",
];

/// Separator used inside the `harmed_groups` cell.
pub const GROUP_SEPARATOR: char = '|';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Claims,
    Workers,
    Annotations,
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Table::Claims => "claims",
            Table::Workers => "workers",
            Table::Annotations => "annotations",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowErrorKind {
    MissingColumn,
    BadRating,
    DanglingReference,
    DuplicateId,
    InvalidField,
}

/// One rejected row (or header) of an input table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub kind: RowErrorKind,
    pub table: Table,
    /// Line number in the source file; the header is line 1.
    pub row: u64,
    pub field: String,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} in {} row {} field `{}`: {}",
            self.kind, self.table, self.row, self.field, self.message
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed table {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{} invalid row(s); first: {}", .0.len(), .0.first().map(|e| e.to_string()).unwrap_or_default())]
    Invalid(Vec<RowError>),
}

impl IngestError {
    pub fn row_errors(&self) -> &[RowError] {
        match self {
            IngestError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QualityError {
    #[error("worker `{0}` has no perceived-truth annotations on gold claims")]
    NoGoldAnnotations(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub claims_path: Option<PathBuf>,
    pub workers_path: Option<PathBuf>,
    pub annotations_path: Option<PathBuf>,
    /// Seconds since the Unix epoch at load time.
    pub loaded_at: Option<u64>,
}

/// A validated dataset. Every annotation references a known claim, and every human
/// annotation a known worker whose gender matches the annotation condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub claims: Vec<Claim>,
    pub workers: Vec<WorkerProfile>,
    pub annotations: Vec<Annotation>,
    pub provenance: Provenance,
}

impl DatasetBundle {
    /// Builds a bundle from in-memory records, checking the same invariants as
    /// [`load_dataset`]. Row numbers in errors are 1-based record indices.
    pub fn new(
        claims: Vec<Claim>,
        workers: Vec<WorkerProfile>,
        annotations: Vec<Annotation>,
    ) -> Result<Self, IngestError> {
        let rows = |n: usize| (1..=n as u64).collect::<Vec<_>>();
        let errors = check_integrity(
            &claims,
            &rows(claims.len()),
            &workers,
            &rows(workers.len()),
            &annotations,
            &rows(annotations.len()),
        );
        if !errors.is_empty() {
            return Err(IngestError::Invalid(errors));
        }
        Ok(Self {
            claims,
            workers,
            annotations,
            provenance: Provenance::default(),
        })
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.claims.len(), self.workers.len(), self.annotations.len())
    }

    pub fn claim(&self, claim_id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.claim_id == claim_id)
    }

    pub fn worker(&self, worker_id: &str) -> Option<&WorkerProfile> {
        self.workers.iter().find(|w| w.worker_id == worker_id)
    }

    pub fn human_annotations(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations
            .iter()
            .filter(|a| a.rater.source() == Source::Human)
    }

    pub fn topic_of(&self) -> BTreeMap<String, Topic> {
        self.claims
            .iter()
            .map(|c| (c.claim_id.clone(), c.topic.clone()))
            .collect()
    }

    /// Same claims and workers with the annotation list replaced. Used to attach
    /// collected LLM annotations.
    pub fn with_annotations(&self, annotations: Vec<Annotation>) -> Result<Self, IngestError> {
        let mut b = DatasetBundle::new(self.claims.clone(), self.workers.clone(), annotations)?;
        b.provenance = self.provenance.clone();
        Ok(b)
    }
}

fn delimiter_for(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("tsv") || ext.eq_ignore_ascii_case("tab") => b'\t',
        _ => b',',
    }
}

/// Parsed table: header positions plus raw records with their line numbers.
struct RawTable {
    index: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl RawTable {
    fn get<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> &'a str {
        self.index
            .get(col)
            .and_then(|&i| rec.get(i))
            .unwrap_or("")
    }
}

fn read_table(
    path: &Path,
    table: Table,
    columns: &[&str],
    errors: &mut Vec<RowError>,
) -> Result<Option<RawTable>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_for(path))
        .flexible(true)
        .from_reader(io::BufReader::new(file));
    let csv_err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let index: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().trim_start_matches('\u{feff}').to_string(), i))
        .collect();
    let missing: Vec<&str> = columns
        .iter()
        .copied()
        .filter(|c| !index.contains_key(*c))
        .collect();
    if !missing.is_empty() {
        errors.extend(missing.into_iter().map(|c| RowError {
            kind: RowErrorKind::MissingColumn,
            table,
            row: 1,
            field: c.to_string(),
            message: format!("header of {} lacks column `{c}`", path.display()),
        }));
        return Ok(None);
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok(Some(RawTable { index, rows }))
}

fn opt_text(s: &str) -> Option<String> {
    let t = s.trim();
    (!t.is_empty()).then(|| t.to_string())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn invalid(table: Table, row: u64, field: &str, message: String) -> RowError {
    RowError {
        kind: RowErrorKind::InvalidField,
        table,
        row,
        field: field.to_string(),
        message,
    }
}

fn parse_claim(t: &RawTable, row: u64, rec: &csv::StringRecord) -> Result<Claim, RowError> {
    let tbl = Table::Claims;
    let claim_id = t.get(rec, "claim_id").trim().to_string();
    if claim_id.is_empty() {
        return Err(invalid(tbl, row, "claim_id", "empty claim_id".into()));
    }
    let text = t.get(rec, "text").to_string();
    let topic_raw = t.get(rec, "topic");
    if topic_raw.trim().is_empty() {
        return Err(invalid(tbl, row, "topic", "empty topic".into()));
    }
    let veracity: Veracity = t
        .get(rec, "veracity")
        .parse()
        .map_err(|e: crate::dataset::ParseEnumError| invalid(tbl, row, "veracity", e.to_string()))?;
    let gold_raw = t.get(rec, "is_gold");
    let is_gold = parse_bool(gold_raw)
        .ok_or_else(|| invalid(tbl, row, "is_gold", format!("not a boolean: `{gold_raw}`")))?;
    let date_raw = t.get(rec, "checked_date").trim();
    let checked_date = if date_raw.is_empty() {
        None
    } else {
        Some(
            NaiveDate::parse_from_str(date_raw, "%Y-%m-%d")
                .map_err(|e| invalid(tbl, row, "checked_date", format!("`{date_raw}`: {e}")))?,
        )
    };
    Ok(Claim {
        claim_id,
        text,
        topic: Topic::parse(topic_raw),
        veracity,
        is_gold,
        checked_date,
    })
}

fn parse_worker(t: &RawTable, row: u64, rec: &csv::StringRecord) -> Result<WorkerProfile, RowError> {
    let tbl = Table::Workers;
    let worker_id = t.get(rec, "worker_id").trim().to_string();
    if worker_id.is_empty() {
        return Err(invalid(tbl, row, "worker_id", "empty worker_id".into()));
    }
    let gender_raw = t.get(rec, "gender");
    let gender = if gender_raw.trim().is_empty() {
        Gender::Undisclosed
    } else {
        gender_raw
            .parse()
            .map_err(|e: crate::dataset::ParseEnumError| invalid(tbl, row, "gender", e.to_string()))?
    };
    Ok(WorkerProfile {
        worker_id,
        gender,
        age_range: opt_text(t.get(rec, "age_range")),
        education: opt_text(t.get(rec, "education")),
        sexual_orientation: opt_text(t.get(rec, "sexual_orientation")),
        race: opt_text(t.get(rec, "race")),
    })
}

fn parse_annotation(
    t: &RawTable,
    row: u64,
    rec: &csv::StringRecord,
) -> Result<Annotation, RowError> {
    let tbl = Table::Annotations;
    let enum_err = |field: &'static str| {
        move |e: crate::dataset::ParseEnumError| invalid(tbl, row, field, e.to_string())
    };
    let claim_id = t.get(rec, "claim_id").trim().to_string();
    if claim_id.is_empty() {
        return Err(invalid(tbl, row, "claim_id", "empty claim_id".into()));
    }
    let source: Source = t.get(rec, "source").parse().map_err(enum_err("source"))?;
    let worker_raw = t.get(rec, "worker_id").trim();
    let variant_raw = t.get(rec, "prompt_variant").trim();
    let condition_raw = t.get(rec, "condition");
    let rater = match source {
        Source::Human => {
            if worker_raw.is_empty() {
                return Err(invalid(tbl, row, "worker_id", "human annotation without worker_id".into()));
            }
            if !variant_raw.is_empty() {
                return Err(invalid(
                    tbl,
                    row,
                    "prompt_variant",
                    "human annotation must not carry a prompt_variant".into(),
                ));
            }
            Rater::Human {
                worker_id: worker_raw.to_string(),
                gender: condition_raw.parse().map_err(enum_err("condition"))?,
            }
        }
        Source::Llm => {
            if !worker_raw.is_empty() {
                return Err(invalid(
                    tbl,
                    row,
                    "worker_id",
                    "LLM annotation must not carry a worker_id".into(),
                ));
            }
            if variant_raw.is_empty() {
                return Err(invalid(tbl, row, "prompt_variant", "LLM annotation without prompt_variant".into()));
            }
            Rater::Llm {
                condition: condition_raw.parse().map_err(enum_err("condition"))?,
                variant: variant_raw.parse().map_err(enum_err("prompt_variant"))?,
            }
        }
    };
    let dimension: Dimension = t.get(rec, "dimension").parse().map_err(enum_err("dimension"))?;
    let rating_raw = t.get(rec, "rating").trim();
    let rating = rating_raw
        .parse::<i64>()
        .ok()
        .and_then(|v| u8::try_from(v).ok())
        .and_then(Rating::new)
        .ok_or_else(|| RowError {
            kind: RowErrorKind::BadRating,
            table: tbl,
            row,
            field: "rating".into(),
            message: format!("rating `{rating_raw}` outside 1-6"),
        })?;
    let groups_raw = t.get(rec, "harmed_groups");
    let harmed_groups = if groups_raw.is_empty() {
        None
    } else {
        Some(groups_raw.split(GROUP_SEPARATOR).map(str::to_string).collect())
    };
    Ok(Annotation {
        claim_id,
        rater,
        dimension,
        rating,
        harmed_groups,
    })
}

fn check_integrity(
    claims: &[Claim],
    claim_rows: &[u64],
    workers: &[WorkerProfile],
    worker_rows: &[u64],
    annotations: &[Annotation],
    annotation_rows: &[u64],
) -> Vec<RowError> {
    let mut errors = Vec::new();
    let mut claim_ids = HashSet::new();
    for (c, &row) in claims.iter().zip(claim_rows) {
        if !claim_ids.insert(c.claim_id.as_str()) {
            errors.push(RowError {
                kind: RowErrorKind::DuplicateId,
                table: Table::Claims,
                row,
                field: "claim_id".into(),
                message: format!("claim_id `{}` repeated", c.claim_id),
            });
        }
        if c.text.trim().is_empty() {
            errors.push(invalid(Table::Claims, row, "text", "empty claim text".into()));
        }
        if c.is_gold && c.topic != Topic::Gold {
            errors.push(invalid(
                Table::Claims,
                row,
                "is_gold",
                format!("gold claim `{}` filed under topic `{}`", c.claim_id, c.topic),
            ));
        }
    }
    let mut genders = HashMap::new();
    for (w, &row) in workers.iter().zip(worker_rows) {
        if genders.insert(w.worker_id.as_str(), w.gender).is_some() {
            errors.push(RowError {
                kind: RowErrorKind::DuplicateId,
                table: Table::Workers,
                row,
                field: "worker_id".into(),
                message: format!("worker_id `{}` repeated", w.worker_id),
            });
        }
    }
    for (a, &row) in annotations.iter().zip(annotation_rows) {
        if !claim_ids.contains(a.claim_id.as_str()) {
            errors.push(RowError {
                kind: RowErrorKind::DanglingReference,
                table: Table::Annotations,
                row,
                field: "claim_id".into(),
                message: format!("unknown claim `{}`", a.claim_id),
            });
        }
        if let Rater::Human { worker_id, gender } = &a.rater {
            match genders.get(worker_id.as_str()) {
                None => errors.push(RowError {
                    kind: RowErrorKind::DanglingReference,
                    table: Table::Annotations,
                    row,
                    field: "worker_id".into(),
                    message: format!("unknown worker `{worker_id}`"),
                }),
                Some(g) if g != gender => errors.push(invalid(
                    Table::Annotations,
                    row,
                    "condition",
                    format!("condition {gender} disagrees with worker `{worker_id}` gender {g}"),
                )),
                Some(_) => {}
            }
        }
        if a.harmed_groups.is_some() && a.dimension != Dimension::GroupHarm {
            errors.push(invalid(
                Table::Annotations,
                row,
                "harmed_groups",
                format!("harmed_groups given for dimension {}", a.dimension),
            ));
        }
    }
    errors
}

/// Reads and validates the claims, workers and annotations tables.
///
/// Files ending in `.tsv` are tab-separated, anything else comma-separated. All row
/// problems across the three files are gathered before failing.
pub fn load_dataset(
    claims_path: &Path,
    workers_path: &Path,
    annotations_path: &Path,
) -> Result<DatasetBundle, IngestError> {
    let mut errors = Vec::new();
    let claims_t = read_table(claims_path, Table::Claims, &CLAIM_COLUMNS, &mut errors)?;
    let workers_t = read_table(workers_path, Table::Workers, &WORKER_COLUMNS, &mut errors)?;
    let ann_t = read_table(annotations_path, Table::Annotations, &ANNOTATION_COLUMNS, &mut errors)?;
    let (Some(claims_t), Some(workers_t), Some(ann_t)) = (claims_t, workers_t, ann_t) else {
        return Err(IngestError::Invalid(errors));
    };

    fn parse_all<T>(
        t: &RawTable,
        f: fn(&RawTable, u64, &csv::StringRecord) -> Result<T, RowError>,
        errors: &mut Vec<RowError>,
    ) -> (Vec<T>, Vec<u64>) {
        let mut out = Vec::with_capacity(t.rows.len());
        let mut rows = Vec::with_capacity(t.rows.len());
        for (line, rec) in &t.rows {
            match f(t, *line, rec) {
                Ok(v) => {
                    out.push(v);
                    rows.push(*line);
                }
                Err(e) => errors.push(e),
            }
        }
        (out, rows)
    }

    let (claims, claim_rows) = parse_all(&claims_t, parse_claim, &mut errors);
    let (workers, worker_rows) = parse_all(&workers_t, parse_worker, &mut errors);
    let (annotations, ann_rows) = parse_all(&ann_t, parse_annotation, &mut errors);
    errors.extend(check_integrity(
        &claims,
        &claim_rows,
        &workers,
        &worker_rows,
        &annotations,
        &ann_rows,
    ));
    if !errors.is_empty() {
        errors.sort_by(|a, b| (a.table as u8, a.row).cmp(&(b.table as u8, b.row)));
        return Err(IngestError::Invalid(errors));
    }
    let loaded_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .ok()
        .map(|d| d.as_secs());
    Ok(DatasetBundle {
        claims,
        workers,
        annotations,
        provenance: Provenance {
            claims_path: Some(claims_path.to_path_buf()),
            workers_path: Some(workers_path.to_path_buf()),
            annotations_path: Some(annotations_path.to_path_buf()),
            loaded_at,
        },
    })
}

/// Loads `claims.csv`, `workers.csv` and `annotations.csv` from one directory.
pub fn load_dataset_dir(dir: &Path) -> Result<DatasetBundle, IngestError> {
    load_dataset(
        &dir.join("claims.csv"),
        &dir.join("workers.csv"),
        &dir.join("annotations.csv"),
    )
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new()
        .delimiter(delimiter_for(path))
        .from_writer(file))
}

pub fn write_claims(path: &Path, claims: &[Claim]) -> Result<(), IngestError> {
    let mut w = csv_writer(path)?;
    let err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(CLAIM_COLUMNS).map_err(err)?;
    for c in claims {
        let date = c.checked_date.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default();
        w.write_record([
            c.claim_id.as_str(),
            c.text.as_str(),
            c.topic.label(),
            c.veracity.as_str(),
            if c.is_gold { "true" } else { "false" },
            date.as_str(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_workers(path: &Path, workers: &[WorkerProfile]) -> Result<(), IngestError> {
    let mut w = csv_writer(path)?;
    let err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(WORKER_COLUMNS).map_err(err)?;
    for p in workers {
        let o = |v: &Option<String>| v.clone().unwrap_or_default();
        w.write_record([
            p.worker_id.clone(),
            p.gender.as_str().to_string(),
            o(&p.age_range),
            o(&p.education),
            o(&p.sexual_orientation),
            o(&p.race),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<(), IngestError> {
    let mut w = csv_writer(path)?;
    let err = |source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(ANNOTATION_COLUMNS).map_err(err)?;
    for a in annotations {
        let groups = a
            .harmed_groups
            .as_ref()
            .map(|g| g.join(&GROUP_SEPARATOR.to_string()))
            .unwrap_or_default();
        w.write_record([
            a.claim_id.clone(),
            a.rater.source().as_str().to_string(),
            a.rater.condition_label().to_string(),
            a.rater.worker_id().unwrap_or_default().to_string(),
            a.rater.variant().map(|v| v.to_string()).unwrap_or_default(),
            a.dimension.as_str().to_string(),
            a.rating.get().to_string(),
            groups,
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the bundle as `claims.csv`, `workers.csv`, `annotations.csv` under `dir`.
pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_claims(&dir.join("claims.csv"), &bundle.claims)?;
    write_workers(&dir.join("workers.csv"), &bundle.workers)?;
    write_annotations(&dir.join("annotations.csv"), &bundle.annotations)
}

/// Mapping from a 1-6 perceived-truth rating to a true/false judgement.
/// Ratings up to `true_max` read as "perceived true"; higher as "perceived false".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRule {
    pub true_max: u8,
}

impl Default for GoldRule {
    fn default() -> Self {
        Self { true_max: 3 }
    }
}

impl GoldRule {
    pub fn is_correct(self, rating: Rating, veracity: Veracity) -> bool {
        let perceived_true = rating.get() <= self.true_max;
        perceived_true == (veracity == Veracity::True)
    }
}

fn gold_tally(bundle: &DatasetBundle, rule: GoldRule) -> HashMap<&str, (usize, usize)> {
    let gold: HashMap<&str, Veracity> = bundle
        .claims
        .iter()
        .filter(|c| c.is_gold)
        .map(|c| (c.claim_id.as_str(), c.veracity))
        .collect();
    let mut tally: HashMap<&str, (usize, usize)> = HashMap::new();
    for a in &bundle.annotations {
        let (Some(wid), Dimension::PerceivedTruth) = (a.rater.worker_id(), a.dimension) else {
            continue;
        };
        if let Some(&v) = gold.get(a.claim_id.as_str()) {
            let e = tally.entry(wid).or_default();
            e.1 += 1;
            if rule.is_correct(a.rating, v) {
                e.0 += 1;
            }
        }
    }
    tally
}

/// Fraction of a worker's perceived-truth ratings on gold claims that agree with the
/// claim's veracity under `rule`.
pub fn gold_accuracy(
    bundle: &DatasetBundle,
    worker_id: &str,
    rule: GoldRule,
) -> Result<f64, QualityError> {
    match gold_tally(bundle, rule).get(worker_id) {
        Some(&(correct, total)) if total > 0 => Ok(correct as f64 / total as f64),
        _ => Err(QualityError::NoGoldAnnotations(worker_id.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedWorker {
    pub worker_id: String,
    pub gender: Gender,
    /// `None` when the worker never rated a gold claim.
    pub accuracy: Option<f64>,
    pub gold_annotations: usize,
    pub removed_annotations: usize,
}

/// Audit trail of a [`filter_workers`] pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub rule: GoldRule,
    pub annotations_before: usize,
    pub annotations_after: usize,
    pub retained_workers: Vec<String>,
    pub removed_workers: Vec<RemovedWorker>,
    pub pruned_claims: Vec<String>,
}

/// Drops every annotation by a worker whose gold accuracy is not strictly above
/// `threshold`, or who has no gold ratings at all. LLM annotations are untouched.
///
/// Removed workers leave the worker list; claims that lose all their annotations in
/// this pass leave the claim list.
pub fn filter_workers(
    bundle: &DatasetBundle,
    threshold: f64,
    rule: GoldRule,
) -> (DatasetBundle, FilterReport) {
    let tally = gold_tally(bundle, rule);
    let mut removed_ids = HashSet::new();
    let mut removed_workers = Vec::new();
    let mut retained_workers = Vec::new();
    for w in &bundle.workers {
        let (acc, n) = match tally.get(w.worker_id.as_str()) {
            Some(&(c, t)) if t > 0 => (Some(c as f64 / t as f64), t),
            _ => (None, 0),
        };
        if acc.is_some_and(|a| a > threshold) {
            retained_workers.push(w.worker_id.clone());
        } else {
            removed_ids.insert(w.worker_id.as_str());
            removed_workers.push(RemovedWorker {
                worker_id: w.worker_id.clone(),
                gender: w.gender,
                accuracy: acc,
                gold_annotations: n,
                removed_annotations: 0,
            });
        }
    }

    let mut removed_count: HashMap<&str, usize> = HashMap::new();
    let mut annotations = Vec::with_capacity(bundle.annotations.len());
    for a in &bundle.annotations {
        match a.rater.worker_id() {
            Some(w) if removed_ids.contains(w) => *removed_count.entry(w).or_default() += 1,
            _ => annotations.push(a.clone()),
        }
    }
    for r in &mut removed_workers {
        r.removed_annotations = removed_count.get(r.worker_id.as_str()).copied().unwrap_or(0);
    }

    let before: HashSet<&str> = bundle.annotations.iter().map(|a| a.claim_id.as_str()).collect();
    let after: HashSet<&str> = annotations.iter().map(|a| a.claim_id.as_str()).collect();
    let pruned_claims: Vec<String> = bundle
        .claims
        .iter()
        .filter(|c| before.contains(c.claim_id.as_str()) && !after.contains(c.claim_id.as_str()))
        .map(|c| c.claim_id.clone())
        .collect();
    let claims = bundle
        .claims
        .iter()
        .filter(|c| !pruned_claims.contains(&c.claim_id))
        .cloned()
        .collect();
    let workers = bundle
        .workers
        .iter()
        .filter(|w| !removed_ids.contains(w.worker_id.as_str()))
        .cloned()
        .collect();

    let report = FilterReport {
        threshold,
        rule,
        annotations_before: bundle.annotations.len(),
        annotations_after: annotations.len(),
        retained_workers,
        removed_workers,
        pruned_claims,
    };
    let out = DatasetBundle {
        claims,
        workers,
        annotations,
        provenance: bundle.provenance.clone(),
    };
    (out, report)
}

/// Keeps only the first (file-order) human rating per (worker, claim, dimension).
pub fn dedupe(bundle: &DatasetBundle) -> DatasetBundle {
    let mut seen = HashSet::new();
    let annotations = bundle
        .annotations
        .iter()
        .filter(|a| match a.rater.worker_id() {
            Some(w) => seen.insert((w, a.claim_id.as_str(), a.dimension)),
            None => true,
        })
        .cloned()
        .collect();
    DatasetBundle {
        claims: bundle.claims.clone(),
        workers: bundle.workers.clone(),
        annotations,
        provenance: bundle.provenance.clone(),
    }
}

/// Convenience for building LLM raters in tests and fixtures.
pub fn llm_rater(condition: LlmCondition, variant: PromptVariant) -> Rater {
    Rater::Llm { condition, variant }
}
