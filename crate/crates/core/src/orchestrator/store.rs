//! Durable per-article results: one JSONL line per (cell, article).

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{GoldLabel, Language};
use crate::jsonl::{self, JsonlError};
use crate::parser::ParsedPrediction;
use crate::prompt::{Phase, RenderedPrompt, Strategy};

/// One backend exchange as sent and received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeTrace {
    pub phase: Phase,
    pub cache_key: String,
    pub response: String,
    pub attempt_count: u32,
    pub latency_ms: u64,
    pub truncated_input: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: String,
    pub backend: String,
    pub model: String,
    pub prompt_language: Language,
    pub dataset: String,
    pub strategy: Strategy,
    pub article_id: String,
    pub gold: GoldLabel,
    /// One prompt for zero-shot, two (analysis, prediction) for CoT.
    pub prompts: Vec<RenderedPrompt>,
    pub responses: Vec<ExchangeTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_text: Option<String>,
    /// Derived from the final-phase response only.
    pub parsed: ParsedPrediction,
    pub truncated_input: bool,
    pub latency_ms: u64,
    /// Set when the backend gave up; such records score as Unparseable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn key(&self) -> (String, String) {
        (self.cell.clone(), self.article_id.clone())
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Structural invariants of a completed record.
    pub fn check(&self) -> Result<(), String> {
        if self.is_failed() {
            return Ok(());
        }
        let phases = self.strategy.phases();
        if self.prompts.len() != phases.len() || self.responses.len() != phases.len() {
            return Err(format!(
                "{}/{}: expected {} exchanges for {}, found {} prompts and {} responses",
                self.cell,
                self.article_id,
                phases.len(),
                self.strategy,
                self.prompts.len(),
                self.responses.len()
            ));
        }
        let last = self.responses.last().expect("non-empty");
        if self.parsed.raw != last.response {
            return Err(format!(
                "{}/{}: parsed label not derived from the final response",
                self.cell, self.article_id
            ));
        }
        if self.strategy == Strategy::CoT {
            let analysis = self.analysis_text.as_deref().unwrap_or_default();
            if analysis != self.responses[0].response || !self.prompts[1].text.contains(analysis) {
                return Err(format!(
                    "{}/{}: prediction prompt does not embed the analysis",
                    self.cell, self.article_id
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("run store write failed: {0}")]
    Write(#[source] std::io::Error),
}

/// Append-only record store keyed by (cell id, article id).
pub struct RunStore {
    path: Option<PathBuf>,
    records: Vec<RunRecord>,
    keys: HashSet<(String, String)>,
    writer: Box<dyn Write + Send>,
}

impl std::fmt::Debug for RunStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunStore")
            .field("path", &self.path)
            .field("records", &self.records.len())
            .finish()
    }
}

impl RunStore {
    /// Opens (or creates) a store file and indexes the existing records.
    pub fn open(path: &Path) -> Result<RunStore, StoreError> {
        let existing: Vec<RunRecord> = jsonl::read_entries(path)?;
        let writer = jsonl::open_append(path)?;
        let mut store = RunStore::with_writer(Box::new(writer));
        store.path = Some(path.to_path_buf());
        for r in existing {
            if !store.keys.insert(r.key()) {
                log::warn!(
                    "{}: ignoring duplicate record for {}/{}",
                    path.display(),
                    r.cell,
                    r.article_id
                );
                continue;
            }
            store.records.push(r);
        }
        Ok(store)
    }

    /// Opens an existing store without creating one.
    pub fn open_existing(path: &Path) -> Result<RunStore, StoreError> {
        if !path.exists() {
            return Err(StoreError::Jsonl(JsonlError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            }));
        }
        RunStore::open(path)
    }

    pub fn in_memory() -> RunStore {
        RunStore::with_writer(Box::new(std::io::sink()))
    }

    /// A store persisting through an arbitrary writer.
    pub fn with_writer(writer: Box<dyn Write + Send>) -> RunStore {
        RunStore {
            path: None,
            records: Vec::new(),
            keys: HashSet::new(),
            writer,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn contains(&self, cell: &str, article_id: &str) -> bool {
        self.keys
            .contains(&(cell.to_string(), article_id.to_string()))
    }

    /// Persists a record; a record whose key is already present is dropped.
    pub fn append(&mut self, record: RunRecord) -> Result<bool, StoreError> {
        let key = record.key();
        if self.keys.contains(&key) {
            return Ok(false);
        }
        jsonl::append_line(&mut self.writer, &record).map_err(StoreError::Write)?;
        self.keys.insert(key);
        self.records.push(record);
        Ok(true)
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
