//! Per-cell metric tables computed from a run store.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use super::store::RunRecord;
use crate::corpus::Language;
use crate::evaluator::{round1, ConfusionMatrix, EvalError, UnparseablePolicy};
use crate::prompt::Strategy;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run store is empty")]
    EmptyStore,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown report format {0:?} (expected md, csv or json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub prompt: Language,
    pub dataset: String,
    pub approach: Strategy,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub parse_rate: f64,
    pub truncation_rate: f64,
    pub failure_rate: f64,
    pub n: u64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub policy: UnparseablePolicy,
    pub rows: Vec<ReportRow>,
}

const COLUMNS: [&str; 12] = [
    "Model",
    "Prompt",
    "Dataset",
    "Approach",
    "Accuracy",
    "Precision",
    "Recall",
    "F1-Score",
    "Parse rate",
    "Truncation rate",
    "Failure rate",
    "N",
];

#[derive(Default)]
struct CellTally {
    confusion: ConfusionMatrix,
    n: u64,
    truncated: u64,
    failed: u64,
}

/// One row per cell, ordered model → prompt language → dataset → approach.
/// Models and datasets keep their order of first appearance in the store.
pub fn report(
    records: &[RunRecord],
    policy: UnparseablePolicy,
) -> Result<ReportTable, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyStore);
    }
    let mut backend_rank: HashMap<&str, usize> = HashMap::new();
    let mut dataset_rank: HashMap<&str, usize> = HashMap::new();
    let mut cells: HashMap<&str, (&RunRecord, CellTally)> = HashMap::new();
    for r in records {
        let next = backend_rank.len();
        backend_rank.entry(&r.backend).or_insert(next);
        let next = dataset_rank.len();
        dataset_rank.entry(&r.dataset).or_insert(next);
        let (_, tally) = cells
            .entry(&r.cell)
            .or_insert_with(|| (r, CellTally::default()));
        tally.confusion.tally(r.gold, r.parsed.label, policy);
        tally.n += 1;
        tally.truncated += u64::from(r.truncated_input);
        tally.failed += u64::from(r.is_failed());
    }

    let mut ordered: Vec<_> = cells.into_values().collect();
    ordered.sort_by_key(|(r, _)| {
        (
            backend_rank[r.backend.as_str()],
            r.prompt_language != Language::English,
            dataset_rank[r.dataset.as_str()],
            r.strategy,
        )
    });
    let rate = |k: u64, n: u64| round1(100.0 * k as f64 / n as f64);
    let mut rows = Vec::with_capacity(ordered.len());
    for (r, tally) in ordered {
        let m = tally.confusion.metrics(policy)?;
        rows.push(ReportRow {
            model: r.backend.clone(),
            prompt: r.prompt_language,
            dataset: r.dataset.clone(),
            approach: r.strategy,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            parse_rate: m.parse_rate,
            truncation_rate: rate(tally.truncated, tally.n),
            failure_rate: rate(tally.failed, tally.n),
            n: tally.n,
            confusion: tally.confusion,
        });
    }
    Ok(ReportTable { policy, rows })
}

impl ReportRow {
    fn cells(&self) -> [String; 12] {
        [
            self.model.clone(),
            self.prompt.name().to_string(),
            self.dataset.clone(),
            self.approach.label().to_string(),
            format!("{:.1}", self.accuracy),
            format!("{:.1}", self.precision),
            format!("{:.1}", self.recall),
            format!("{:.1}", self.f1),
            format!("{:.1}", self.parse_rate),
            format!("{:.1}", self.truncation_rate),
            format!("{:.1}", self.failure_rate),
            self.n.to_string(),
        ]
    }
}

impl ReportTable {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", COLUMNS.join(" | "));
        let _ = writeln!(
            out,
            "|{}",
            COLUMNS
                .iter()
                .enumerate()
                .map(|(i, _)| if i < 4 { "---|" } else { "---:|" })
                .collect::<String>()
        );
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", row.cells().join(" | "));
        }
        let _ = writeln!(out, "\nUnparseable policy: {}", self.policy.as_str());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "prompt",
            "dataset",
            "approach",
            "accuracy",
            "precision",
            "recall",
            "f1",
            "parse_rate",
            "truncation_rate",
            "failure_rate",
            "n",
        ])
        .expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.cells()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
