//! OpenAI-compatible HTTP backend.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, EmbeddingVector, LlmError};

#[derive(Debug, Clone)]
pub enum TransportError {
    Status { code: u16, body: String },
    Network(String),
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::Status { code, .. } => *code == 408 || *code == 429 || *code >= 500,
        }
    }

    fn is_auth(&self) -> bool {
        matches!(self, TransportError::Status { code: 401 | 403, .. })
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Network(m) => write!(f, "{m}"),
        }
    }
}

/// The wire. Swappable so tests can count and fail requests.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let mut req = self.agent.post(url);
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let code = resp.status().as_u16();
        if code >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError::Status { code, body });
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError::Network(format!("reading response body: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// e.g. `https://api.openai.com/v1`
    pub base_url: String,
    /// Environment variable holding the bearer token; `None` sends no auth.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_attempts() -> u32 {
    5
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_timeout_secs() -> u64 {
    120
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            api_key_env: None,
            max_attempts: default_attempts(),
            backoff_base_ms: default_backoff_ms(),
            requests_per_minute: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

struct TokenBucket {
    capacity: f64,
    tokens: f64,
    per_sec: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(rpm: u32) -> Self {
        let capacity = f64::from(rpm.max(1));
        TokenBucket {
            capacity,
            tokens: capacity,
            per_sec: capacity / 60.0,
            last: Instant::now(),
        }
    }

    /// Takes a token, or returns how long to wait for one.
    fn try_take(&mut self) -> Option<Duration> {
        let now = Instant::now();
        let dt = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + dt * self.per_sec).min(self.capacity);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            None
        } else {
            Some(Duration::from_secs_f64((1.0 - self.tokens) / self.per_sec))
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    token: Option<String>,
    transport: Box<dyn HttpTransport>,
    limiter: Option<Mutex<TokenBucket>>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let transport = UreqTransport::new(Duration::from_secs(config.timeout_secs));
        Self::with_transport(config, Box::new(transport))
    }

    /// Reads the auth token from the configured environment variable.
    pub fn with_transport(config: HttpConfig, transport: Box<dyn HttpTransport>) -> Result<Self, LlmError> {
        if config.max_attempts == 0 {
            return Err(LlmError::Config("max_attempts must be at least 1".into()));
        }
        let token = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let limiter = config.requests_per_minute.map(|rpm| Mutex::new(TokenBucket::new(rpm)));
        Ok(HttpBackend {
            config,
            token,
            transport,
            limiter,
        })
    }

    fn throttle(&self) {
        let Some(limiter) = &self.limiter else { return };
        loop {
            let wait = limiter.lock().expect("limiter lock").try_take();
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d),
            }
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.throttle();
            match self.transport.post_json(&url, self.token.as_deref(), body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_auth() => return Err(LlmError::Config(format!("authentication failed: {e}"))),
                Err(e) if e.is_transient() => {
                    log::warn!("{url}: attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
                Err(e) => {
                    return Err(LlmError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Err(LlmError::Transport {
            attempts: self.config.max_attempts,
            message: last,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let body = json!({
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let resp = self.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
    }

    fn embed(&self, text: &str, model: &str) -> Result<EmbeddingVector, LlmError> {
        let resp = self.post("embeddings", &json!({"model": model, "input": text}))?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::Protocol("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| LlmError::Protocol("non-numeric embedding".into())))
            .collect::<Result<Vec<_>, _>>()?;
        EmbeddingVector::new(values, model)
    }
}
