//! Chat-completion and embedding access behind one client.
//!
//! Every pipeline call goes through [`LlmClient`], which consults a
//! content-addressed [`ResponseCache`] before touching a backend. A client
//! without a backend is a pure replayer: cache misses become errors.

mod cache;
mod http;
mod mock;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheRecord, ResponseCache};
pub use http::{HttpBackend, HttpConfig, HttpTransport, TransportError, UreqTransport};
pub use mock::{HashBackend, RecordingBackend, ScriptRule, ScriptedBackend, MOCK_EMBEDDING_DIM};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no cached response for key {key}")]
    CacheMiss { key: String },
    #[error("scripted backend has no response for this {stage} prompt")]
    ScriptMiss { stage: Stage },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),
    #[error("cache I/O: {0}")]
    CacheIo(#[from] std::io::Error),
}

/// Cache partition for a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generation,
    Scoring,
    Inference,
    Embedding,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Generation => "generation",
            Stage::Scoring => "scoring",
            Stage::Inference => "inference",
            Stage::Embedding => "embedding",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stage: Stage,
    /// Retry ordinal. Zero for first attempts; nonzero attempts get their own
    /// cache entry so a retry never replays the response it is retrying.
    #[serde(default)]
    pub attempt: u32,
}

impl ChatRequest {
    pub fn new(stage: Stage, model: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest {
            model: model.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 1024,
            stage,
            attempt: 0,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// sha256 over (model, prompt, temperature, stage[, attempt]).
    pub fn cache_key(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            self.model.as_str(),
            self.prompt.as_str(),
            &format!("{:?}", self.temperature),
            self.stage.as_str(),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        if self.attempt > 0 {
            h.update(b"attempt");
            h.update(self.attempt.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Model settings for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    1024
}

impl ModelParams {
    pub fn new(model: impl Into<String>, temperature: f64) -> Self {
        ModelParams {
            model: model.into(),
            temperature,
            max_tokens: default_max_tokens(),
        }
    }

    pub fn request(&self, stage: Stage, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest::new(stage, self.model.clone(), prompt)
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model: impl Into<String>) -> Result<Self, LlmError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LlmError::DegenerateVector("non-finite component".into()));
        }
        Ok(EmbeddingVector {
            values,
            model: model.into(),
        })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity, clamped into [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, LlmError> {
    if a.values.len() != b.values.len() {
        return Err(LlmError::DegenerateVector(format!(
            "length mismatch {} vs {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(LlmError::DegenerateVector("zero-norm input".into()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// A completion/embedding provider. Implementations must tolerate
/// concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError>;
    fn embed(&self, text: &str, model: &str) -> Result<EmbeddingVector, LlmError>;
}

/// Cache-first front end over an optional backend.
pub struct LlmClient {
    backend: Option<Arc<dyn Backend>>,
    cache: Option<Arc<ResponseCache>>,
    calls: AtomicU64,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>, cache: Option<Arc<ResponseCache>>) -> Self {
        LlmClient {
            backend: Some(backend),
            cache,
            calls: AtomicU64::new(0),
        }
    }

    /// Serves recorded responses only.
    pub fn replay(cache: Arc<ResponseCache>) -> Self {
        LlmClient {
            backend: None,
            cache: Some(cache),
            calls: AtomicU64::new(0),
        }
    }

    /// Number of requests that reached the backend (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> Option<&Arc<ResponseCache>> {
        self.cache.as_ref()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        req.validate()?;
        let key = req.cache_key();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| LlmError::CacheMiss { key: key.clone() })?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = backend.complete(req)?;
        if let Some(cache) = &self.cache {
            cache.put(CacheRecord::new(key, req.stage, &req.model, &req.prompt, &response))?;
        }
        Ok(response)
    }

    pub fn embed(&self, text: &str, model: &str) -> Result<EmbeddingVector, LlmError> {
        if text.is_empty() {
            return Err(LlmError::InvalidRequest("empty embedding input".into()));
        }
        let req = ChatRequest::new(Stage::Embedding, model, text);
        let key = req.cache_key();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            let values: Vec<f64> = serde_json::from_str(&hit)
                .map_err(|e| LlmError::Protocol(format!("cached embedding: {e}")))?;
            return EmbeddingVector::new(values, model);
        }
        let backend = self
            .backend
            .as_ref()
            .ok_or_else(|| LlmError::CacheMiss { key: key.clone() })?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let v = backend.embed(text, model)?;
        if let Some(cache) = &self.cache {
            let body = serde_json::to_string(&v.values).expect("finite floats serialize");
            cache.put(CacheRecord::new(key, Stage::Embedding, model, text, &body))?;
        }
        Ok(v)
    }
}
