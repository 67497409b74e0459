//! Experiment matrix planning and execution.
//!
//! A plan is the Cartesian product backends × prompt languages × datasets ×
//! strategies, in that nesting order. Execution walks cells sequentially and
//! runs the articles of a cell on up to `max_inflight` worker threads; a
//! single writer (the calling thread) appends finished records to the
//! [`RunStore`]. Records already in the store are skipped, so re-running a
//! plan resumes it.

mod report;
mod store;

pub use report::{report, ReportError, ReportFormat, ReportRow, ReportTable};
pub use store::{ExchangeTrace, RunRecord, RunStore, StoreError};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    self, BackendDescriptor, BackendError, ChatBackend, ChatRequest, DecodingParams,
};
use crate::config::RunConfig;
use crate::corpus::{self, Article, CorpusError, Dataset, Language};
use crate::evaluator::UnparseablePolicy;
use crate::parser::{parse_label, ParsedPrediction};
use crate::prompt::{self, Phase, PromptError, RenderedPrompt, RoleMode, Strategy, TemplateSet};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub backend: String,
    pub model: String,
    pub prompt_language: Language,
    pub dataset: String,
    pub strategy: Strategy,
}

impl ExperimentCell {
    /// Stable identifier, e.g. `jais/en/assiri/cot`.
    pub fn id(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.backend,
            self.prompt_language.code(),
            self.dataset,
            self.strategy.code()
        )
    }
}

impl fmt::Display for ExperimentCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub cells: Vec<ExperimentCell>,
    pub sample_size: Option<usize>,
    pub seed: u64,
    pub policy: UnparseablePolicy,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("duplicate {kind} name {name:?}")]
    DuplicateName { kind: &'static str, name: String },
    #[error("duplicate cell {0}")]
    DuplicateCell(String),
    #[error("plan selects no {0}")]
    EmptySelection(&'static str),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Expands the configured matrix into cells in report order.
pub fn plan(config: &RunConfig) -> Result<ExperimentPlan, RunError> {
    let backends = select(
        "backend",
        config.backends.iter().map(|b| b.name.as_str()),
        config.only_backends.as_deref(),
    )
    .map_err(|e| match e {
        SelectError::Unknown(n) => RunError::UnknownBackend(n),
        SelectError::Duplicate(kind, name) => RunError::DuplicateName { kind, name },
    })?;
    let datasets = select(
        "dataset",
        config.datasets.iter().map(|d| d.name.as_str()),
        config.only_datasets.as_deref(),
    )
    .map_err(|e| match e {
        SelectError::Unknown(n) => RunError::UnknownDataset(n),
        SelectError::Duplicate(kind, name) => RunError::DuplicateName { kind, name },
    })?;
    if backends.is_empty() {
        return Err(RunError::EmptySelection("backends"));
    }
    if datasets.is_empty() {
        return Err(RunError::EmptySelection("datasets"));
    }
    let languages = ordered_unique(&config.prompt_languages, &Language::ALL);
    let strategies = ordered_unique(&config.strategies, &Strategy::ALL);
    if languages.is_empty() {
        return Err(RunError::EmptySelection("prompt languages"));
    }
    if strategies.is_empty() {
        return Err(RunError::EmptySelection("strategies"));
    }

    let mut cells = Vec::new();
    for b in &backends {
        let model = config
            .backends
            .iter()
            .find(|c| &c.name == b)
            .map(|c| c.model_name().to_string())
            .unwrap_or_default();
        for &prompt_language in &languages {
            for d in &datasets {
                for &strategy in &strategies {
                    cells.push(ExperimentCell {
                        backend: b.clone(),
                        model: model.clone(),
                        prompt_language,
                        dataset: d.clone(),
                        strategy,
                    });
                }
            }
        }
    }
    Ok(ExperimentPlan {
        cells,
        sample_size: config.sample_size,
        seed: config.seed,
        policy: config.policy,
    })
}

enum SelectError {
    Unknown(String),
    Duplicate(&'static str, String),
}

fn select<'a>(
    kind: &'static str,
    available: impl Iterator<Item = &'a str>,
    only: Option<&[String]>,
) -> Result<Vec<String>, SelectError> {
    let mut names = Vec::new();
    let mut seen = HashSet::new();
    for n in available {
        if !seen.insert(n) {
            return Err(SelectError::Duplicate(kind, n.to_string()));
        }
        names.push(n.to_string());
    }
    match only {
        None => Ok(names),
        Some(only) => {
            if let Some(unknown) = only.iter().find(|n| !seen.contains(n.as_str())) {
                return Err(SelectError::Unknown(unknown.clone()));
            }
            Ok(names.into_iter().filter(|n| only.contains(n)).collect())
        }
    }
}

// Keeps canonical order (English before Arabic, zero-shot before CoT).
fn ordered_unique<T: Copy + PartialEq>(wanted: &[T], canonical: &[T]) -> Vec<T> {
    canonical
        .iter()
        .copied()
        .filter(|c| wanted.contains(c))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionSummary {
    pub cells: usize,
    pub completed: usize,
    pub failed: usize,
    pub skipped: usize,
    /// Stopped early because of [`ExecuteOptions::stop_after`].
    pub interrupted: bool,
}

impl ExecutionSummary {
    pub fn new_records(&self) -> usize {
        self.completed + self.failed
    }
}

impl fmt::Display for ExecutionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.new_records() == 0 && !self.interrupted {
            return write!(f, "all skipped ({} records already present)", self.skipped);
        }
        write!(
            f,
            "{} cells: {} completed, {} failed, {} skipped",
            self.cells, self.completed, self.failed, self.skipped
        )?;
        if self.interrupted {
            f.write_str(" (stopped early)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecuteOptions {
    /// Stop after persisting this many new records.
    pub stop_after: Option<usize>,
}

struct BackendEntry {
    descriptor: BackendDescriptor,
    client: Arc<dyn ChatBackend>,
}

/// Everything a plan needs at execution time: templates, backends and
/// loaded datasets, addressed by name.
pub struct Harness {
    templates: TemplateSet,
    role_mode: RoleMode,
    backends: BTreeMap<String, BackendEntry>,
    datasets: BTreeMap<String, Dataset>,
}

impl Harness {
    pub fn new(templates: TemplateSet, role_mode: RoleMode) -> Harness {
        Harness {
            templates,
            role_mode,
            backends: BTreeMap::new(),
            datasets: BTreeMap::new(),
        }
    }

    pub fn add_backend(&mut self, descriptor: BackendDescriptor, client: Arc<dyn ChatBackend>) {
        self.backends
            .insert(descriptor.name.clone(), BackendEntry { descriptor, client });
    }

    pub fn add_dataset(&mut self, dataset: Dataset) {
        self.datasets.insert(dataset.name().to_string(), dataset);
    }

    pub fn dataset(&self, name: &str) -> Option<&Dataset> {
        self.datasets.get(name)
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Articles a cell runs over: the whole dataset, or its seeded sample.
    pub fn articles_for(&self, plan: &ExperimentPlan, dataset: &str) -> Result<Dataset, RunError> {
        let d = self
            .datasets
            .get(dataset)
            .ok_or_else(|| RunError::UnknownDataset(dataset.to_string()))?;
        match plan.sample_size {
            Some(n) => Ok(corpus::sample(d, n, plan.seed)?),
            None => Ok(d.clone()),
        }
    }

    pub fn execute(
        &self,
        plan: &ExperimentPlan,
        store: &mut RunStore,
    ) -> Result<ExecutionSummary, RunError> {
        self.execute_with(plan, store, ExecuteOptions::default())
    }

    pub fn execute_with(
        &self,
        plan: &ExperimentPlan,
        store: &mut RunStore,
        options: ExecuteOptions,
    ) -> Result<ExecutionSummary, RunError> {
        let mut seen = HashSet::new();
        for cell in &plan.cells {
            if !seen.insert(cell.id()) {
                return Err(RunError::DuplicateCell(cell.id()));
            }
            if !self.backends.contains_key(&cell.backend) {
                return Err(RunError::UnknownBackend(cell.backend.clone()));
            }
            if !self.datasets.contains_key(&cell.dataset) {
                return Err(RunError::UnknownDataset(cell.dataset.clone()));
            }
        }
        let mut summary = ExecutionSummary {
            cells: plan.cells.len(),
            ..Default::default()
        };
        let mut budget = options.stop_after;
        for cell in &plan.cells {
            let articles = self.articles_for(plan, &cell.dataset)?;
            let done = self.execute_cell(cell, &articles, store, &mut summary, &mut budget)?;
            if !done {
                summary.interrupted = true;
                break;
            }
        }
        Ok(summary)
    }

    /// Returns false when the record budget ran out.
    fn execute_cell(
        &self,
        cell: &ExperimentCell,
        dataset: &Dataset,
        store: &mut RunStore,
        summary: &mut ExecutionSummary,
        budget: &mut Option<usize>,
    ) -> Result<bool, RunError> {
        let cell_id = cell.id();
        let pending: Vec<&Article> = dataset
            .articles()
            .iter()
            .filter(|a| !store.contains(&cell_id, &a.id))
            .collect();
        summary.skipped += dataset.len() - pending.len();
        if pending.is_empty() {
            return Ok(true);
        }
        if *budget == Some(0) {
            return Ok(false);
        }
        let entry = &self.backends[&cell.backend];
        let workers = entry.descriptor.max_inflight.clamp(1, pending.len());
        log::info!("{cell_id}: {} articles on {workers} workers", pending.len());

        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let mut write_error = None;
        std::thread::scope(|s| {
            let (tx, rx) = mpsc::sync_channel::<RunRecord>(workers * 2);
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, stop, pending, cell_id) = (&next, &stop, &pending, cell_id.as_str());
                s.spawn(move || loop {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(article) = pending.get(i) else { break };
                    let record = self.run_article(cell, cell_id, entry, article);
                    if tx.send(record).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for record in rx {
                if stop.load(Ordering::SeqCst) {
                    continue;
                }
                let failed = record.is_failed();
                match store.append(record) {
                    Ok(true) => {
                        if failed {
                            summary.failed += 1;
                        } else {
                            summary.completed += 1;
                        }
                        if let Some(b) = budget.as_mut() {
                            *b -= 1;
                            if *b == 0 {
                                stop.store(true, Ordering::SeqCst);
                            }
                        }
                    }
                    Ok(false) => summary.skipped += 1,
                    Err(e) => {
                        write_error = Some(e);
                        stop.store(true, Ordering::SeqCst);
                    }
                }
            }
        });
        if let Some(e) = write_error {
            return Err(e.into());
        }
        let finished = pending.iter().all(|a| store.contains(&cell_id, &a.id));
        Ok(finished)
    }

    fn run_article(
        &self,
        cell: &ExperimentCell,
        cell_id: &str,
        entry: &BackendEntry,
        article: &Article,
    ) -> RunRecord {
        let mut record = RunRecord {
            cell: cell_id.to_string(),
            backend: cell.backend.clone(),
            model: entry.descriptor.model_name.clone(),
            prompt_language: cell.prompt_language,
            dataset: cell.dataset.clone(),
            strategy: cell.strategy,
            article_id: article.id.clone(),
            gold: article.gold,
            prompts: Vec::new(),
            responses: Vec::new(),
            analysis_text: None,
            parsed: ParsedPrediction::unparseable(""),
            truncated_input: false,
            latency_ms: 0,
            failure: None,
        };
        if let Err(e) = self.run_phases(cell, entry, article, &mut record) {
            log::warn!("{cell_id}/{}: {e}", article.id);
            record.failure = Some(e);
            record.parsed = ParsedPrediction::unparseable("");
        }
        record
    }

    fn run_phases(
        &self,
        cell: &ExperimentCell,
        entry: &BackendEntry,
        article: &Article,
        record: &mut RunRecord,
    ) -> Result<(), String> {
        let lang = cell.prompt_language;
        let desc = &entry.descriptor;
        let final_text = match cell.strategy {
            Strategy::ZeroShot => {
                let t = self.templates.get(Strategy::ZeroShot, Phase::Single, lang);
                let p = prompt::render(t, article).map_err(|e| e.to_string())?;
                self.exchange(entry, p, desc.decoding, record)?
            }
            Strategy::CoT => {
                let t = self.templates.get(Strategy::CoT, Phase::Analysis, lang);
                let p = prompt::render(t, article).map_err(|e| e.to_string())?;
                let analysis = self.exchange(entry, p, desc.analysis_decoding(), record)?;
                record.analysis_text = Some(analysis.clone());
                let t = self.templates.get(Strategy::CoT, Phase::Prediction, lang);
                let p = prompt::render_prediction(t, article, &analysis).map_err(|e| match e {
                    PromptError::EmptyAnalysis => "backend returned an empty analysis".to_string(),
                    other => other.to_string(),
                })?;
                self.exchange(entry, p, desc.decoding, record)?
            }
        };
        record.parsed = parse_label(&final_text);
        Ok(())
    }

    fn exchange(
        &self,
        entry: &BackendEntry,
        prompt: RenderedPrompt,
        decoding: DecodingParams,
        record: &mut RunRecord,
    ) -> Result<String, String> {
        let request = ChatRequest::new(
            entry.descriptor.model_name.clone(),
            prompt.to_messages(self.role_mode),
            decoding,
        )
        .map_err(|e| e.to_string())?;
        let phase = prompt.phase;
        record.prompts.push(prompt);
        let response =
            backend::complete(entry.client.as_ref(), &request).map_err(|e| e.to_string())?;
        record.truncated_input |= response.truncated_input;
        record.latency_ms += response.latency_ms;
        record.responses.push(ExchangeTrace {
            phase,
            cache_key: request.cache_key,
            response: response.text.clone(),
            attempt_count: response.attempt_count,
            latency_ms: response.latency_ms,
            truncated_input: response.truncated_input,
        });
        Ok(response.text)
    }
}
