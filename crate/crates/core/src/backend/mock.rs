//! Scripted backend: a pure function of the request.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

type Rule = dyn Fn(&ChatRequest) -> String + Send + Sync;

/// Config-file form of the built-in mock rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum MockSpec {
    /// Always answers `response`.
    Constant { response: String },
    /// Answers `on_match` when the last user message contains `marker`,
    /// otherwise `otherwise`.
    Marker {
        marker: String,
        #[serde(default = "one")]
        on_match: String,
        #[serde(default = "zero")]
        otherwise: String,
    },
}

fn one() -> String {
    "1".into()
}

fn zero() -> String {
    "0".into()
}

#[derive(Clone)]
pub struct MockBackend {
    rule: Arc<Rule>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MockBackend")
    }
}

impl MockBackend {
    pub fn new(rule: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> MockBackend {
        MockBackend {
            rule: Arc::new(rule),
        }
    }

    pub fn constant(response: impl Into<String>) -> MockBackend {
        let response = response.into();
        MockBackend::new(move |_| response.clone())
    }

    pub fn marker(marker: impl Into<String>) -> MockBackend {
        MockBackend::from_spec(&MockSpec::Marker {
            marker: marker.into(),
            on_match: one(),
            otherwise: zero(),
        })
    }

    pub fn from_spec(spec: &MockSpec) -> MockBackend {
        match spec.clone() {
            MockSpec::Constant { response } => MockBackend::constant(response),
            MockSpec::Marker {
                marker,
                on_match,
                otherwise,
            } => MockBackend::new(move |req| {
                if req.last_user_content().contains(&marker) {
                    on_match.clone()
                } else {
                    otherwise.clone()
                }
            }),
        }
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        Ok(ChatResponse {
            text: (self.rule)(request),
            latency_ms: 0,
            truncated_input: false,
            attempt_count: 1,
        })
    }
}
