//! HTTP scoring and embedding clients.
//!
//! Wire protocol: `POST {url}` with a JSON body, bearer token taken from an
//! environment variable. Scoring bodies are `{"context", "continuations"}` and
//! responses `{"logprobs": [...]}`; embedding bodies are `{"texts": [...]}` and
//! responses `{"vectors": [[...], ...]}`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::Serialize;
use serde_json::Value;

use super::{Backend, ScoreRequest};
use crate::error::{LmError, RetrievalError};
use crate::retrieval::{Embedder, EmbeddingVector};

pub const DEFAULT_TOKEN_ENV: &str = "IKE_API_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct TransportConfig {
    pub url: String,
    /// Environment variable holding the bearer token; unset means no auth.
    pub token_env: String,
    pub timeout: Duration,
    pub attempts: u32,
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl TransportConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token_env: DEFAULT_TOKEN_ENV.to_string(),
            timeout: Duration::from_secs(60),
            attempts: 3,
            backoff: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter poisoned") += 1;
        self.0.cv.notify_one();
    }
}

struct Transport {
    config: TransportConfig,
    agent: ureq::Agent,
    limiter: Limiter,
}

enum Failure {
    Retriable(String),
    Fatal(LmError),
}

impl Transport {
    fn new(config: TransportConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Limiter::new(config.max_in_flight);
        Self {
            config,
            agent,
            limiter,
        }
    }

    /// Posts `body` verbatim, retrying transport failures and 429/5xx with
    /// exponential backoff. Returns the raw response text.
    fn post(&self, body: &str) -> Result<String, LmError> {
        let _permit = self.limiter.acquire();
        let token = std::env::var(&self.config.token_env).ok();
        let attempts = self.config.attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            debug!("POST {} attempt {attempt}: {body}", self.config.url);
            match self.post_once(body, token.as_deref()) {
                Ok(raw) => return Ok(raw),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retriable(msg)) => {
                    warn!("{}: attempt {attempt}/{attempts} failed: {msg}", self.config.url);
                    last = msg;
                    if attempt < attempts {
                        thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
                    }
                }
            }
        }
        Err(LmError::Transport {
            attempts,
            message: last,
        })
    }

    fn post_once(&self, body: &str, token: Option<&str>) -> Result<String, Failure> {
        let mut req = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", "application/json");
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| Failure::Retriable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retriable(e.to_string()))?;
        match status {
            200..=299 => Ok(text),
            429 | 500..=599 => Err(Failure::Retriable(format!("HTTP {status}"))),
            _ => Err(Failure::Fatal(LmError::Protocol {
                message: format!("HTTP {status}"),
                raw: text,
            })),
        }
    }
}

/// Scoring client for a remote completion-scoring service.
pub struct RemoteBackend {
    id: String,
    transport: Transport,
}

impl RemoteBackend {
    pub fn new(config: TransportConfig) -> Self {
        Self {
            id: format!("remote:{}", config.url),
            transport: Transport::new(config),
        }
    }

    /// Overrides the backend id used for cache keys (e.g. to name the model).
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn fetch(&self, request: &ScoreRequest) -> Result<String, LmError> {
        let body = serde_json::to_string(request).expect("request serializes");
        self.transport.post(&body)
    }
}

/// Client for a remote sentence-embedding service.
pub struct RemoteEmbedder {
    transport: Transport,
    batch: usize,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    texts: &'a [String],
}

impl RemoteEmbedder {
    pub fn new(config: TransportConfig) -> Self {
        Self {
            transport: Transport::new(config),
            batch: 64,
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let body = serde_json::to_string(&EmbedBody { texts }).expect("body serializes");
        let raw = self.transport.post(&body)?;
        let protocol = |message: String| {
            RetrievalError::Lm(LmError::Protocol {
                message,
                raw: raw.clone(),
            })
        };
        let v: Value = serde_json::from_str(&raw).map_err(|e| protocol(e.to_string()))?;
        let rows = v
            .get("vectors")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol("missing `vectors` array".into()))?;
        if rows.len() != texts.len() {
            return Err(protocol(format!(
                "{} vectors for {} texts",
                rows.len(),
                texts.len()
            )));
        }
        rows.iter()
            .map(|row| {
                let values = row
                    .as_array()
                    .ok_or_else(|| protocol("vector is not an array".into()))?
                    .iter()
                    .map(|x| x.as_f64().map(|x| x as f32))
                    .collect::<Option<Vec<f32>>>()
                    .ok_or_else(|| protocol("non-numeric vector entry".into()))?;
                EmbeddingVector::new(values)
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch) {
            out.extend(self.embed_batch(chunk)?);
        }
        if let Some(first) = out.first() {
            let d = first.dim();
            if let Some(bad) = out.iter().find(|v| v.dim() != d) {
                return Err(RetrievalError::DimensionMismatch {
                    expected: d,
                    actual: bad.dim(),
                });
            }
        }
        Ok(out)
    }
}
