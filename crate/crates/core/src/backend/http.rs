//! OpenAI-compatible chat-completions client with retries and a bound on
//! requests in flight.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};
use url::Url;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Raw HTTP exchange result, before status interpretation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Other(String),
}

/// The network hop, separated out so tests can observe and script it.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &Url,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &Url,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url.as_str());
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq_error)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(map_ureq_error)?;
        Ok(HttpReply { status, body })
    }
}

fn map_ureq_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(t) => TransportError::Timeout(t.to_string()),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
            TransportError::Timeout(io.to_string())
        }
        ureq::Error::Io(io) => TransportError::Connect(io.to_string()),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            TransportError::Connect(e.to_string())
        }
        other => TransportError::Other(other.to_string()),
    }
}

/// Exponential backoff: attempt `n` (0-based) waits `base * 2^n`, scaled by a
/// uniform factor in `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * 2f64.powi(retry as i32);
        let factor = if self.jitter > 0.0 {
            rand::rng().random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64(nominal * factor)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InflightLimit {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InflightLimit);

impl InflightLimit {
    fn new(k: usize) -> Self {
        InflightLimit {
            free: Mutex::new(k.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    url: Url,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    timeout: Duration,
    limit: InflightLimit,
}

impl HttpBackend {
    /// `endpoint` is either the server base URL or the full
    /// `/v1/chat/completions` URL.
    pub fn new(endpoint: &Url, max_inflight: usize) -> HttpBackend {
        HttpBackend {
            url: chat_completions_url(endpoint),
            api_key: std::env::var(super::API_KEY_ENV)
                .ok()
                .filter(|k| !k.is_empty()),
            transport: Arc::new(UreqTransport),
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
            limit: InflightLimit::new(max_inflight),
        }
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn url(&self) -> &Url {
        &self.url
    }
}

pub fn chat_completions_url(endpoint: &Url) -> Url {
    if endpoint
        .path()
        .trim_end_matches('/')
        .ends_with("/chat/completions")
    {
        return endpoint.clone();
    }
    let mut url = endpoint.clone();
    let base = endpoint.path().trim_end_matches('/');
    let path = if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    };
    url.set_path(&path);
    url
}

pub fn request_body(request: &ChatRequest) -> Value {
    json!({
        "model": request.model,
        "messages": request.messages,
        "temperature": request.decoding.temperature,
        "max_tokens": request.decoding.max_new_tokens,
    })
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let parsed: CompletionBody =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content.unwrap_or_default())
        .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))
}

fn is_retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

fn truncate_for_error(body: &str) -> String {
    body.chars().take(200).collect()
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = request_body(request);
        let _permit = self.limit.acquire();
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 2));
            }
            match self
                .transport
                .post_json(&self.url, self.api_key.as_deref(), &body, self.timeout)
            {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let text = parse_completion(&reply.body)?;
                    return Ok(ChatResponse {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        truncated_input: false,
                        attempt_count: attempt,
                    });
                }
                Ok(reply) if is_retryable_status(reply.status) => {
                    last = format!("HTTP {}: {}", reply.status, truncate_for_error(&reply.body));
                }
                Ok(reply) => {
                    return Err(BackendError::NonRetryable {
                        status: reply.status,
                        body: truncate_for_error(&reply.body),
                    })
                }
                Err(e @ (TransportError::Timeout(_) | TransportError::Connect(_))) => {
                    last = e.to_string();
                }
                Err(TransportError::Other(m)) => {
                    return Err(BackendError::Exhausted {
                        attempts: attempt,
                        last: m,
                    })
                }
            }
            log::debug!("attempt {attempt} for {} failed: {last}", request.cache_key);
        }
        Err(BackendError::Exhausted {
            attempts: self.retry.max_attempts.max(1),
            last,
        })
    }
}
