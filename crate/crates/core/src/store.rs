//! Dataset ingestion, the append-only trial log, and report export.
//!
//! The dataset is a single JSON document; trials are JSON-Lines, one record
//! per line, appended atomically (a crashed write leaves at worst a truncated
//! final line, which reload tolerates). The trial log is the cache that makes
//! runs resumable and cutoff sweeps free.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CandidateScore, EngineConfig, EvalDataset, TrialKey, TrialRecord, Violation};
use crate::engine::EvalRunResult;
use crate::metrics::RankingReport;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON at {json_path}: {detail}")]
    Json { path: String, json_path: String, detail: String },
    #[error("{path}: dataset failed validation:\n{}", violations.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    SchemaViolations { path: String, violations: Vec<Violation> },
    #[error("duplicate trial key: {key}")]
    DuplicateKey { key: String },
    #[error("invalid trial record: {detail}")]
    InvalidRecord { detail: String },
    #[error("{path}: corrupt trial log at line {line}: {detail}")]
    CorruptLog { path: String, line: usize, detail: String },
}

/// Parses and validates a dataset document.
pub fn parse_dataset(text: &str, origin: &str) -> Result<EvalDataset, StoreError> {
    let mut deserializer = serde_json::Deserializer::from_str(text);
    let dataset: EvalDataset =
        serde_path_to_error::deserialize(&mut deserializer).map_err(|e| StoreError::Json {
            path: origin.to_string(),
            json_path: e.path().to_string(),
            detail: e.inner().to_string(),
        })?;
    let violations = dataset.validate();
    if !violations.is_empty() {
        return Err(StoreError::SchemaViolations { path: origin.to_string(), violations });
    }
    Ok(dataset)
}

/// Loads a dataset file, rejecting it on any schema or invariant violation.
pub fn load_dataset(path: &Path) -> Result<EvalDataset, StoreError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text, &path.display().to_string())
}

/// Writes a dataset document (pretty JSON).
pub fn save_dataset(dataset: &EvalDataset, path: &Path) -> Result<(), StoreError> {
    let text = serde_json::to_string_pretty(dataset).expect("dataset serialization cannot fail");
    std::fs::write(path, text)
        .map_err(|source| StoreError::Io { path: path.display().to_string(), source })
}

struct StoreInner {
    index: BTreeMap<TrialKey, TrialRecord>,
    file: Option<File>,
    warnings: Vec<String>,
}

/// Append-only trial log with an exact-key in-memory index.
///
/// Single writer, many readers: all access is serialized through one lock,
/// and the engine is the only appender. Lookups see every record appended
/// before them.
pub struct TrialStore {
    path: Option<PathBuf>,
    inner: Mutex<StoreInner>,
}

impl TrialStore {
    /// A store with no backing file. Records live for the process only.
    pub fn in_memory() -> Self {
        TrialStore {
            path: None,
            inner: Mutex::new(StoreInner { index: BTreeMap::new(), file: None, warnings: Vec::new() }),
        }
    }

    /// Opens (or creates) a JSONL trial log and replays it into the index.
    ///
    /// A truncated final line (the footprint of a crashed append) is
    /// skipped with a warning. Corruption anywhere else is a hard error.
    /// When the same key appears more than once, the latest record wins.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)
                    .map_err(|source| StoreError::Io { path: parent.display().to_string(), source })?;
            }
        }
        let mut index = BTreeMap::new();
        let mut warnings = Vec::new();
        if path.exists() {
            let file = File::open(path)
                .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
            let reader = BufReader::new(file);
            let lines: Vec<String> = reader
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
            let last = lines.len();
            for (i, line) in lines.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<TrialRecord>(&line) {
                    Ok(record) => {
                        if let Err(detail) = record.check() {
                            return Err(StoreError::CorruptLog {
                                path: path.display().to_string(),
                                line: i + 1,
                                detail,
                            });
                        }
                        index.insert(record.key.clone(), record);
                    }
                    Err(e) if i + 1 == last => {
                        warnings.push(format!(
                            "{}: final line {} is truncated or unparsable and was skipped ({e})",
                            path.display(),
                            i + 1
                        ));
                    }
                    Err(e) => {
                        return Err(StoreError::CorruptLog {
                            path: path.display().to_string(),
                            line: i + 1,
                            detail: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| StoreError::Io { path: path.display().to_string(), source })?;
        Ok(TrialStore {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(StoreInner { index, file: Some(file), warnings }),
        })
    }

    /// Appends one record: one full line written in a single call, then
    /// flushed. Duplicate keys are rejected.
    pub fn append(&self, record: &TrialRecord) -> Result<(), StoreError> {
        record.check().map_err(|detail| StoreError::InvalidRecord { detail })?;
        let mut inner = self.inner.lock().expect("trial store lock poisoned");
        if inner.index.contains_key(&record.key) {
            return Err(StoreError::DuplicateKey { key: record.key.to_string() });
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(record).expect("record serialization cannot fail");
            line.push('\n');
            let path = self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| StoreError::Io { path, source })?;
        }
        inner.index.insert(record.key.clone(), record.clone());
        Ok(())
    }

    /// The record for an exact key, if present.
    pub fn lookup(&self, key: &TrialKey) -> Option<TrialRecord> {
        self.inner.lock().expect("trial store lock poisoned").index.get(key).cloned()
    }

    pub fn contains(&self, key: &TrialKey) -> bool {
        self.inner.lock().expect("trial store lock poisoned").index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("trial store lock poisoned").index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records, sorted by key.
    pub fn records(&self) -> Vec<TrialRecord> {
        self.inner.lock().expect("trial store lock poisoned").index.values().cloned().collect()
    }

    /// Warnings collected while replaying the log (truncated final line).
    pub fn warnings(&self) -> Vec<String> {
        self.inner.lock().expect("trial store lock poisoned").warnings.clone()
    }
}

/// Whitespace-token word count, the granularity used for the per-story
/// verbosity statistics.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCountRow {
    pub plot_id: String,
    pub system: String,
    pub words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub system: String,
    pub passes: u32,
    pub count: u32,
}

/// Everything one run exports: identification, config snapshot, ranking
/// report, raw scores, and the descriptive statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub run_id: String,
    pub method: String,
    pub config: EngineConfig,
    pub report: RankingReport,
    pub scores: Vec<CandidateScore>,
    pub pass_histogram: Vec<HistogramRow>,
    pub mean_passes: BTreeMap<String, f64>,
    pub word_counts: Vec<WordCountRow>,
}

/// Builds the exportable document for a run.
pub fn report_doc(
    report: &RankingReport,
    run: &EvalRunResult,
    dataset: &EvalDataset,
    method: &str,
) -> ReportDoc {
    // histogram of pass counts per system, plus per-system means
    let mut counts: BTreeMap<(String, u32), u32> = BTreeMap::new();
    let mut sums: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for score in &run.scores {
        *counts.entry((score.candidate_system.clone(), score.passes)).or_insert(0) += 1;
        let entry = sums.entry(score.candidate_system.clone()).or_insert((0, 0));
        entry.0 += u64::from(score.passes);
        entry.1 += 1;
    }
    let pass_histogram = counts
        .into_iter()
        .map(|((system, passes), count)| HistogramRow { system, passes, count })
        .collect();
    let mean_passes = sums
        .into_iter()
        .map(|(system, (sum, n))| (system, sum as f64 / n as f64))
        .collect();

    let mut word_counts = Vec::new();
    for plot in &dataset.plots {
        for (system, text) in &plot.texts {
            word_counts.push(WordCountRow {
                plot_id: plot.plot_id.clone(),
                system: system.clone(),
                words: word_count(text),
            });
        }
    }

    ReportDoc {
        run_id: run.run_id.clone(),
        method: method.to_string(),
        config: run.config.clone(),
        report: report.clone(),
        scores: run.scores.clone(),
        pass_histogram,
        mean_passes,
        word_counts,
    }
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.4}")).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<(), StoreError> {
    std::fs::write(path, contents)
        .map_err(|source| StoreError::Io { path: path.display().to_string(), source })
}

/// Writes report files into `out_dir` and returns their paths.
///
/// JSON: `report.json` (the full [`ReportDoc`]). CSV: `summary.csv` (one
/// Table-1-style row), `per_plot.csv`, `histogram.csv`, `word_counts.csv`.
pub fn export_report(
    report: &RankingReport,
    run: &EvalRunResult,
    dataset: &EvalDataset,
    method: &str,
    format: ExportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, StoreError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|source| StoreError::Io { path: out_dir.display().to_string(), source })?;
    let doc = report_doc(report, run, dataset, method);
    let mut written = Vec::new();

    match format {
        ExportFormat::Json => {
            let path = out_dir.join("report.json");
            let mut text = serde_json::to_string_pretty(&doc).expect("report serialization cannot fail");
            text.push('\n');
            write_file(&path, &text)?;
            written.push(path);
        }
        ExportFormat::Csv => {
            let summary = format!(
                "Method,Model,AVG_Spearman,AVG_KendallTau,Pairwise_Accuracy\n{},{},{},{},{}\n",
                csv_field(method),
                csv_field(&run.config.judge_model),
                fmt_opt(report.avg_spearman),
                fmt_opt(report.avg_kendall),
                fmt_opt(report.pairwise_accuracy),
            );
            let path = out_dir.join("summary.csv");
            write_file(&path, &summary)?;
            written.push(path);

            let mut per_plot = String::from("plot_id,spearman,kendall,pair_correct,pair_total\n");
            for (plot_id, m) in &report.per_plot {
                per_plot.push_str(&format!(
                    "{},{},{},{},{}\n",
                    csv_field(plot_id),
                    fmt_opt(m.spearman),
                    fmt_opt(m.kendall),
                    m.pair_correct,
                    m.pair_total
                ));
            }
            let path = out_dir.join("per_plot.csv");
            write_file(&path, &per_plot)?;
            written.push(path);

            let mut histogram = String::from("system,passes,count\n");
            for row in &doc.pass_histogram {
                histogram.push_str(&format!("{},{},{}\n", csv_field(&row.system), row.passes, row.count));
            }
            let path = out_dir.join("histogram.csv");
            write_file(&path, &histogram)?;
            written.push(path);

            let mut words = String::from("plot_id,system,words\n");
            for row in &doc.word_counts {
                words.push_str(&format!(
                    "{},{},{}\n",
                    csv_field(&row.plot_id),
                    csv_field(&row.system),
                    row.words
                ));
            }
            let path = out_dir.join("word_counts.csv");
            write_file(&path, &words)?;
            written.push(path);
        }
    }
    Ok(written)
}
