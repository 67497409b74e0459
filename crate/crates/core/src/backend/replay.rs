//! Record/replay response cache keyed by `ChatRequest::cache_key`.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, DecodingParams};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub decoding: DecodingParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub text: String,
    pub latency_ms: u64,
    pub truncated_input: bool,
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub cache_key: String,
    pub request: RecordedRequest,
    pub response: RecordedResponse,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Append-only JSONL cache. The first entry for a key wins; later
/// duplicates in the file are ignored.
pub struct RecordStore {
    path: PathBuf,
    index: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<File>,
}

impl RecordStore {
    pub fn open(path: &Path) -> Result<RecordStore, BackendError> {
        let entries: Vec<CacheEntry> = jsonl::read_entries(path)?;
        let mut index = HashMap::with_capacity(entries.len());
        for e in entries {
            index.entry(e.cache_key.clone()).or_insert(e);
        }
        Ok(RecordStore {
            path: path.to_path_buf(),
            index: RwLock::new(index),
            writer: Mutex::new(jsonl::open_append(path)?),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, cache_key: &str) -> Option<CacheEntry> {
        self.index.read().unwrap().get(cache_key).cloned()
    }

    /// Snapshot of all logical entries, sorted by key.
    pub fn entries(&self) -> Vec<CacheEntry> {
        let mut v: Vec<_> = self.index.read().unwrap().values().cloned().collect();
        v.sort_by(|a, b| a.cache_key.cmp(&b.cache_key));
        v
    }

    /// Stores the exchange unless its key is already present. Returns
    /// whether a new entry was written.
    pub fn record(
        &self,
        request: &ChatRequest,
        response: &ChatResponse,
    ) -> Result<bool, BackendError> {
        let mut writer = self.writer.lock().unwrap();
        if self.index.read().unwrap().contains_key(&request.cache_key) {
            return Ok(false);
        }
        let entry = CacheEntry {
            cache_key: request.cache_key.clone(),
            request: RecordedRequest {
                model: request.model.clone(),
                messages: request.messages.clone(),
                decoding: request.decoding,
            },
            response: RecordedResponse {
                text: response.text.clone(),
                latency_ms: response.latency_ms,
                truncated_input: response.truncated_input,
            },
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        jsonl::append_line(&mut *writer, &entry).map_err(BackendError::StorageWrite)?;
        self.index
            .write()
            .unwrap()
            .insert(entry.cache_key.clone(), entry);
        Ok(true)
    }
}

/// Answers from the cache. On a miss it either fails (strict replay) or
/// forwards to `fallback` and records the result.
pub struct ReplayBackend {
    store: Arc<RecordStore>,
    fallback: Option<Arc<dyn ChatBackend>>,
}

impl ReplayBackend {
    pub fn strict(store: Arc<RecordStore>) -> ReplayBackend {
        ReplayBackend {
            store,
            fallback: None,
        }
    }

    pub fn recording(store: Arc<RecordStore>, inner: Arc<dyn ChatBackend>) -> ReplayBackend {
        ReplayBackend {
            store,
            fallback: Some(inner),
        }
    }

    pub fn store(&self) -> &Arc<RecordStore> {
        &self.store
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if let Some(hit) = self.store.lookup(&request.cache_key) {
            return Ok(ChatResponse {
                text: hit.response.text,
                latency_ms: hit.response.latency_ms,
                truncated_input: hit.response.truncated_input,
                attempt_count: 1,
            });
        }
        let Some(inner) = &self.fallback else {
            return Err(BackendError::MissingRecording(request.cache_key.clone()));
        };
        let response = inner.complete(request)?;
        self.store.record(request, &response)?;
        Ok(response)
    }
}
