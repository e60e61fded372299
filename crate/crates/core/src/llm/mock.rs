//! Deterministic offline backends.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, EmbeddingVector, LlmError, Stage};

pub const MOCK_EMBEDDING_DIM: usize = 64;

/// Feature-hashed bag of words, L2-normalized. Texts sharing words land
/// near each other, so offline similarity analyses still mean something.
fn hashed_embedding(seed: u64, text: &str) -> Vec<f64> {
    let mut v = vec![0.0f64; MOCK_EMBEDDING_DIM];
    let add = |v: &mut Vec<f64>, token: &str, salt: &[u8]| {
        let digest = Sha256::new()
            .chain_update(seed.to_le_bytes())
            .chain_update(salt)
            .chain_update(token.as_bytes())
            .finalize();
        let slot = u64::from_le_bytes(digest[0..8].try_into().unwrap()) as usize % MOCK_EMBEDDING_DIM;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        let mag = 0.5 + f64::from(digest[9]) / 255.0;
        v[slot] += sign * mag;
    };
    let lowered = text.to_lowercase();
    for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        add(&mut v, token, b"w");
    }
    if v.iter().all(|x| *x == 0.0) {
        add(&mut v, text, b"whole");
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Hash-derived completions and embeddings; no script needed.
#[derive(Debug, Clone, Default)]
pub struct HashBackend {
    pub seed: u64,
}

impl HashBackend {
    pub fn new(seed: u64) -> Self {
        HashBackend { seed }
    }
}

impl Backend for HashBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let digest = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(req.cache_key().as_bytes())
            .finalize();
        Ok(format!("mock-{}", hex::encode(&digest[..8])))
    }

    fn embed(&self, text: &str, model: &str) -> Result<EmbeddingVector, LlmError> {
        EmbeddingVector::new(hashed_embedding(self.seed, text), model)
    }
}

/// A pattern rule: fires when the prompt contains every `contains` needle and
/// none of the `absent` ones (and the stage matches, when given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub stage: Option<Stage>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub absent: Vec<String>,
    pub response: String,
}

impl ScriptRule {
    fn matches(&self, req: &ChatRequest) -> bool {
        self.stage.is_none_or(|s| s == req.stage)
            && self.contains.iter().all(|n| req.prompt.contains(n.as_str()))
            && !self.absent.iter().any(|n| req.prompt.contains(n.as_str()))
    }
}

/// Canned responses: exact prompt lookups first, then rules in order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedBackend {
    #[serde(default)]
    pub exact: HashMap<String, String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub seed: u64,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_json_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("reading script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("parsing script {}: {e}", path.display())))
    }

    pub fn with_exact(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.exact.insert(prompt.into(), response.into());
        self
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Shorthand for a stage rule keyed on substrings.
    pub fn on(mut self, stage: Stage, contains: &[&str], response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            stage: Some(stage),
            contains: contains.iter().map(|s| s.to_string()).collect(),
            absent: Vec::new(),
            response: response.into(),
        });
        self
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        if let Some(r) = self.exact.get(&req.prompt) {
            return Ok(r.clone());
        }
        self.rules
            .iter()
            .find(|r| r.matches(req))
            .map(|r| r.response.clone())
            .ok_or(LlmError::ScriptMiss { stage: req.stage })
    }

    fn embed(&self, text: &str, model: &str) -> Result<EmbeddingVector, LlmError> {
        EmbeddingVector::new(hashed_embedding(self.seed, text), model)
    }
}

/// Wraps a backend and keeps every request it sees, for prompt inspection.
pub struct RecordingBackend<B> {
    inner: B,
    log: std::sync::Mutex<Vec<ChatRequest>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            log: std::sync::Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("recording lock").clone()
    }

    pub fn prompts_for(&self, stage: Stage) -> Vec<String> {
        self.requests()
            .into_iter()
            .filter(|r| r.stage == stage)
            .map(|r| r.prompt)
            .collect()
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        self.log.lock().expect("recording lock").push(req.clone());
        self.inner.complete(req)
    }

    fn embed(&self, text: &str, model: &str) -> Result<EmbeddingVector, LlmError> {
        self.inner.embed(text, model)
    }
}
