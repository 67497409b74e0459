//! Backend-agnostic chat-completion access.
//!
//! Three backends implement [`ChatBackend`]: an OpenAI-compatible HTTP
//! client ([`http::HttpBackend`]), a scripted [`mock::MockBackend`], and a
//! record/replay layer ([`replay::ReplayBackend`]) over an append-only
//! response cache. [`complete`] applies the context-budget guard before
//! handing a request to any of them.

pub mod http;
pub mod mock;
pub mod replay;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

pub use http::{HttpBackend, RetryPolicy, Transport, UreqTransport};
pub use mock::MockBackend;
pub use replay::{RecordStore, ReplayBackend};

/// Environment variable holding the bearer token for HTTP endpoints.
pub const API_KEY_ENV: &str = "SATIRE_BENCH_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("HTTP {status}: {body}")]
    NonRetryable { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("missing recording for cache_key {0}")]
    MissingRecording(String),
    #[error("response cache: {0}")]
    Storage(#[from] crate::jsonl::JsonlError),
    #[error("response cache write failed: {0}")]
    StorageWrite(#[source] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// Byte range of the article (or other variable) payload inside
    /// `content`; the only part the context guard may cut.
    #[serde(skip)]
    pub payload: Option<Range<usize>>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role,
            content: content.into(),
            payload: None,
        }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage::new(Role::User, content)
    }

    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage::new(Role::System, content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub context_budget_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.0,
            max_new_tokens: 16,
            context_budget_tokens: 2048,
        }
    }
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidRequest(m));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if self.max_new_tokens < 1 {
            return bad("max_new_tokens must be >= 1".into());
        }
        if self.context_budget_tokens <= self.max_new_tokens {
            return bad(format!(
                "context_budget_tokens {} must exceed max_new_tokens {}",
                self.context_budget_tokens, self.max_new_tokens
            ));
        }
        Ok(())
    }

    pub fn with_max_new_tokens(self, max_new_tokens: u32) -> DecodingParams {
        DecodingParams {
            max_new_tokens,
            ..self
        }
    }

    /// Tokens available for the prompt itself.
    pub fn input_budget(&self) -> u32 {
        self.context_budget_tokens - self.max_new_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub decoding: DecodingParams,
    pub cache_key: String,
}

impl ChatRequest {
    pub fn new(
        model: impl Into<String>,
        messages: Vec<ChatMessage>,
        decoding: DecodingParams,
    ) -> Result<ChatRequest, BackendError> {
        let model = model.into();
        decoding.validate()?;
        if !messages.iter().any(|m| m.role == Role::User) {
            return Err(BackendError::InvalidRequest(
                "at least one user message is required".into(),
            ));
        }
        let cache_key = cache_key(&model, &messages, &decoding);
        Ok(ChatRequest {
            model,
            messages,
            decoding,
            cache_key,
        })
    }

    /// Content of the final user message.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

/// SHA-256 over a canonical JSON serialization of the model name, the
/// (role, content) pairs and the decoding parameters.
pub fn cache_key(model: &str, messages: &[ChatMessage], decoding: &DecodingParams) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        model: &'a str,
        messages: Vec<(Role, &'a str)>,
        temperature: f64,
        max_new_tokens: u32,
        context_budget_tokens: u32,
    }
    let canonical = Canonical {
        model,
        messages: messages
            .iter()
            .map(|m| (m.role, m.content.as_str()))
            .collect(),
        temperature: decoding.temperature,
        max_new_tokens: decoding.max_new_tokens,
        context_budget_tokens: decoding.context_budget_tokens,
    };
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    pub truncated_input: bool,
    pub attempt_count: u32,
}

/// Anything that can answer a chat-completion request.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Conservative token estimate used by the truncation guard:
/// `ceil(chars / 3)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(3)
}

/// Cuts the tail of the payload in the last message carrying one until the
/// whole prompt fits `decoding.input_budget()`. Instruction text is never
/// touched, so a prompt whose instructions alone exceed the budget is sent
/// over budget. Returns the (possibly rebuilt) request and whether anything
/// was cut.
pub fn fit_to_budget(request: &ChatRequest) -> (ChatRequest, bool) {
    let total_chars: usize = request
        .messages
        .iter()
        .map(|m| m.content.chars().count())
        .sum();
    let allowed_chars = request.decoding.input_budget() as usize * 3;
    if total_chars <= allowed_chars {
        return (request.clone(), false);
    }
    let Some(idx) = request.messages.iter().rposition(|m| m.payload.is_some()) else {
        return (request.clone(), false);
    };
    let msg = &request.messages[idx];
    let span = msg.payload.clone().expect("payload checked above");
    let payload = &msg.content[span.clone()];
    let payload_chars = payload.chars().count();
    let cut = (total_chars - allowed_chars).min(payload_chars);
    if cut == 0 {
        return (request.clone(), false);
    }
    let keep_bytes = payload
        .char_indices()
        .nth(payload_chars - cut)
        .map(|(b, _)| b)
        .unwrap_or(payload.len());
    let new_end = span.start + keep_bytes;
    let mut content = String::with_capacity(msg.content.len());
    content.push_str(&msg.content[..new_end]);
    content.push_str(&msg.content[span.end..]);

    let mut messages = request.messages.clone();
    messages[idx] = ChatMessage {
        role: msg.role,
        content,
        payload: Some(span.start..new_end),
    };
    let rebuilt = ChatRequest::new(request.model.clone(), messages, request.decoding)
        .expect("truncation keeps a valid request valid");
    (rebuilt, true)
}

/// Sends `request` through `backend` after applying the context guard.
pub fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
) -> Result<ChatResponse, BackendError> {
    let (fitted, truncated) = fit_to_budget(request);
    let mut response = backend.complete(&fitted)?;
    response.truncated_input |= truncated;
    Ok(response)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[serde(alias = "http-endpoint")]
    Http,
    Mock,
    Replay,
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "http" | "http-endpoint" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            "replay" => Ok(BackendKind::Replay),
            other => Err(BackendError::InvalidDescriptor(format!(
                "unknown backend kind {other:?}"
            ))),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
            BackendKind::Replay => "replay",
        })
    }
}

/// Identity and decoding defaults of one model deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    /// Display name used in reports (e.g. "Jais").
    pub name: String,
    pub kind: BackendKind,
    pub model_name: String,
    pub endpoint_url: Option<Url>,
    /// Decoding for answer phases (zero-shot and CoT prediction).
    pub decoding: DecodingParams,
    /// `max_new_tokens` for the CoT analysis phase.
    pub analysis_max_new_tokens: u32,
    pub max_inflight: usize,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, kind: BackendKind, model_name: impl Into<String>) -> Self {
        BackendDescriptor {
            name: name.into(),
            kind,
            model_name: model_name.into(),
            endpoint_url: None,
            decoding: DecodingParams::default(),
            analysis_max_new_tokens: 512,
            max_inflight: 4,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidDescriptor(m));
        match (self.kind, &self.endpoint_url) {
            (BackendKind::Http, None) => {
                return bad(format!("{}: http backend needs an endpoint", self.name))
            }
            (BackendKind::Mock | BackendKind::Replay, Some(_)) => {
                return bad(format!(
                    "{}: only http backends take an endpoint",
                    self.name
                ))
            }
            _ => {}
        }
        if self.max_inflight == 0 {
            return bad(format!("{}: max_inflight must be >= 1", self.name));
        }
        self.decoding.validate()?;
        self.analysis_decoding().validate()
    }

    pub fn analysis_decoding(&self) -> DecodingParams {
        self.decoding
            .with_max_new_tokens(self.analysis_max_new_tokens)
    }
}
