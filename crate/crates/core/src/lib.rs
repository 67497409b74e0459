//! Batch harness for binary satire detection with chat-completion models.
//!
//! The pipeline loads labelled corpora ([`corpus`]), renders zero-shot or
//! two-phase chain-of-thought prompts in English or Arabic ([`prompt`]),
//! sends them to a chat backend ([`backend`]), extracts a 1/0 verdict
//! ([`parser`]), and scores the verdicts per experiment cell
//! ([`evaluator`]). [`orchestrator`] ties these together with a resumable
//! run store, and [`cli`] exposes everything as one binary.

pub mod backend;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod evaluator;
pub mod jsonl;
pub mod orchestrator;
pub mod parser;
pub mod prompt;

pub use corpus::{Article, Dataset, GoldLabel, Language};
pub use evaluator::{ConfusionMatrix, MetricsReport, UnparseablePolicy};
pub use parser::{parse_label, ParsedPrediction, PredictedLabel};
pub use prompt::{Phase, Strategy, TemplateSet};
