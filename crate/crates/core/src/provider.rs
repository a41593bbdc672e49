//! Embedding providers: an OpenAI-compatible HTTP client and a deterministic
//! mock, both behind [`EmbeddingProvider`].
//!
//! The remote wire format is
//! `POST {"model": .., "input": [..]}` answered by
//! `{"data": [{"index": i, "embedding": [..]}, ..]}`. Indices may arrive in any
//! order; results are always returned in input order.

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{Embedding, VectorError};

const BODY_EXCERPT_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider timed out after {timeout_ms} ms")]
    Timeout { timeout_ms: u64 },
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("batch of {len} texts exceeds max_batch {max}")]
    BatchTooLarge { len: usize, max: usize },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

impl ProviderError {
    /// Timeouts and 5xx responses are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout { .. } => true,
            ProviderError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteHttp,
    Mock,
}

/// Settings for [`ProviderKind::Mock`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSettings {
    pub dim: usize,
    pub seed: u64,
    /// Artificial delay per call, used by latency fixtures.
    pub delay_ms: u64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self {
            dim: 256,
            seed: 0,
            delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configuration.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
    #[serde(default)]
    pub expected_dim: Option<usize>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub mock: MockSettings,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_batch() -> usize {
    64
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_base_ms() -> u64 {
    250
}

impl ProviderConfig {
    pub fn mock(model_name: impl Into<String>, dim: usize, seed: u64) -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint_url: String::new(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_batch: default_max_batch(),
            expected_dim: Some(dim),
            max_attempts: default_max_attempts(),
            backoff_base_ms: default_backoff_base_ms(),
            mock: MockSettings {
                dim,
                seed,
                delay_ms: 0,
            },
        }
    }

    pub fn remote(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::RemoteHttp,
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_batch: default_max_batch(),
            expected_dim: None,
            max_attempts: default_max_attempts(),
            backoff_base_ms: default_backoff_base_ms(),
            mock: MockSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::InvalidConfig(m.to_string()));
        if self.timeout_ms < 1 {
            return bad("timeout_ms must be >= 1");
        }
        if self.max_batch < 1 {
            return bad("max_batch must be >= 1");
        }
        if self.max_attempts < 1 {
            return bad("max_attempts must be >= 1");
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name must not be empty");
        }
        if self.expected_dim == Some(0) {
            return bad("expected_dim must be positive");
        }
        match self.kind {
            ProviderKind::RemoteHttp if self.endpoint_url.trim().is_empty() => {
                bad("remote_http requires endpoint_url")
            }
            ProviderKind::Mock if self.mock.dim < 2 => bad("mock dim must be >= 2"),
            _ => Ok(()),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ProviderError> {
        let cfg: ProviderConfig =
            toml::from_str(s).map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output of one provider call.
#[derive(Debug, Clone)]
pub struct EmbedResult {
    pub embeddings: Vec<Embedding>,
    /// Request start to last byte received, retries included.
    pub wall_time_s: f64,
    pub text_count: usize,
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn max_batch(&self) -> usize;

    /// Embeds `texts`, returning one embedding per text in input order.
    async fn embed_batch(&self, texts: &[String]) -> Result<EmbedResult, ProviderError>;
}

/// Checks the shared batch preconditions.
pub fn check_batch(texts: &[String], max_batch: usize) -> Result<(), ProviderError> {
    if texts.is_empty() || texts.iter().any(|t| t.is_empty()) {
        return Err(ProviderError::EmptyInput);
    }
    if texts.len() > max_batch {
        return Err(ProviderError::BatchTooLarge {
            len: texts.len(),
            max: max_batch,
        });
    }
    Ok(())
}

fn check_dims(embeddings: &[Embedding], expected: Option<usize>) -> Result<(), ProviderError> {
    let Some(first) = embeddings.first() else {
        return Ok(());
    };
    let expected = expected.unwrap_or(first.dim());
    match embeddings.iter().find(|e| e.dim() != expected) {
        Some(e) => Err(ProviderError::DimensionMismatch {
            expected,
            actual: e.dim(),
        }),
        None => Ok(()),
    }
}

pub fn build_provider(config: &ProviderConfig) -> Result<Arc<dyn EmbeddingProvider>, ProviderError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::Mock => Arc::new(MockProvider::from_config(config)),
        ProviderKind::RemoteHttp => Arc::new(HttpProvider::new(config)?),
    })
}

fn mock_vector(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());

    // Box-Muller with libm so the output is identical on every platform.
    let mut out = Vec::with_capacity(dim + 1);
    while out.len() < dim {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * libm::log(u1)).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * libm::cos(theta));
        out.push(r * libm::sin(theta));
    }
    out.truncate(dim);
    out
}

/// Deterministic pseudorandom unit vector for `text`.
///
/// The text and seed are hashed with SHA-256, the digest seeds a ChaCha8
/// stream, and the stream drives Gaussian samples that are then normalized.
///
/// # Panics
///
/// If `dim < 2`.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Embedding {
    mock_embed_as(text, dim, seed, "mock")
}

fn mock_embed_as(text: &str, dim: usize, seed: u64, model_id: &str) -> Embedding {
    assert!(dim >= 2, "mock embeddings need dim >= 2");
    Embedding::new(mock_vector(text, dim, seed), model_id)
        .and_then(Embedding::into_normalized)
        .expect("gaussian samples are finite and almost surely non-zero")
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    model_id: String,
    dim: usize,
    seed: u64,
    delay: Duration,
    max_batch: usize,
}

impl MockProvider {
    pub fn new(model_id: impl Into<String>, dim: usize, seed: u64) -> Self {
        Self {
            model_id: model_id.into(),
            dim,
            seed,
            delay: Duration::ZERO,
            max_batch: default_max_batch(),
        }
    }

    pub fn from_config(config: &ProviderConfig) -> Self {
        Self {
            model_id: config.model_name.clone(),
            dim: config.mock.dim,
            seed: config.mock.seed,
            delay: Duration::from_millis(config.mock.delay_ms),
            max_batch: config.max_batch,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Embedding {
        mock_embed_as(text, self.dim, self.seed, &self.model_id)
    }
}

#[async_trait]
impl EmbeddingProvider for MockProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<EmbedResult, ProviderError> {
        check_batch(texts, self.max_batch)?;
        let start = Instant::now();
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        let embeddings = texts.iter().map(|t| self.embed_one(t)).collect();
        Ok(EmbedResult {
            embeddings,
            wall_time_s: start.elapsed().as_secs_f64(),
            text_count: texts.len(),
        })
    }
}

#[derive(Serialize)]
struct EmbeddingsRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Client for OpenAI-compatible `/embeddings` endpoints.
pub struct HttpProvider {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout_ms: u64,
    max_batch: usize,
    expected_dim: Option<usize>,
    max_attempts: u32,
    backoff_base: Duration,
}

impl HttpProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let api_key = match config.api_key_env.as_deref() {
            Some(var) if !var.is_empty() => Some(
                std::env::var(var).map_err(|_| ProviderError::MissingCredential(var.to_string()))?,
            ),
            _ => None,
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ProviderError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint_url.clone(),
            model: config.model_name.clone(),
            api_key,
            timeout_ms: config.timeout_ms,
            max_batch: config.max_batch,
            expected_dim: config.expected_dim,
            max_attempts: config.max_attempts,
            backoff_base: Duration::from_millis(config.backoff_base_ms),
        })
    }

    fn map_transport(&self, err: reqwest::Error) -> ProviderError {
        if err.is_timeout() {
            ProviderError::Timeout {
                timeout_ms: self.timeout_ms,
            }
        } else if err.is_connect() {
            ProviderError::Unreachable(err.to_string())
        } else {
            ProviderError::InvalidResponse(err.to_string())
        }
    }

    async fn attempt(&self, texts: &[String]) -> Result<Vec<u8>, ProviderError> {
        let mut req = self.client.post(&self.endpoint).json(&EmbeddingsRequest {
            model: &self.model,
            input: texts,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| self.map_transport(e))?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| self.map_transport(e))?;
        if !status.is_success() {
            let text = String::from_utf8_lossy(&body);
            return Err(ProviderError::Http {
                status: status.as_u16(),
                body: text.chars().take(BODY_EXCERPT_CHARS).collect(),
            });
        }
        Ok(body.to_vec())
    }

    fn decode(&self, body: &[u8], n: usize) -> Result<Vec<Embedding>, ProviderError> {
        let parsed: EmbeddingsResponse = serde_json::from_slice(body)
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        if parsed.data.len() != n {
            return Err(ProviderError::InvalidResponse(format!(
                "expected {n} embeddings, got {}",
                parsed.data.len()
            )));
        }
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; n];
        for datum in parsed.data {
            let slot = slots.get_mut(datum.index).ok_or_else(|| {
                ProviderError::InvalidResponse(format!("index {} out of range", datum.index))
            })?;
            if slot.replace(datum.embedding).is_some() {
                return Err(ProviderError::InvalidResponse(format!(
                    "index {} repeated",
                    datum.index
                )));
            }
        }
        slots
            .into_iter()
            .map(|v| Ok(Embedding::new(v.expect("all n slots filled"), self.model.clone())?))
            .collect()
    }
}

/// Full-jitter exponential backoff: uniform in `[0, base * 4^retry]`.
pub(crate) fn backoff_delay(base: Duration, retry: u32) -> Duration {
    let cap = base.saturating_mul(4u32.saturating_pow(retry));
    if cap.is_zero() {
        return cap;
    }
    let nanos = rand::rng().random_range(0..=cap.as_nanos() as u64);
    Duration::from_nanos(nanos)
}

#[async_trait]
impl EmbeddingProvider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<EmbedResult, ProviderError> {
        check_batch(texts, self.max_batch)?;
        let start = Instant::now();
        let mut retry = 0;
        let body = loop {
            match self.attempt(texts).await {
                Ok(body) => break body,
                Err(e) if e.is_retryable() && retry + 1 < self.max_attempts => {
                    tracing::debug!(error = %e, retry, "retrying embedding request");
                    tokio::time::sleep(backoff_delay(self.backoff_base, retry)).await;
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let wall_time_s = start.elapsed().as_secs_f64();
        let embeddings = self.decode(&body, texts.len())?;
        check_dims(&embeddings, self.expected_dim)?;
        Ok(EmbedResult {
            embeddings,
            wall_time_s,
            text_count: texts.len(),
        })
    }
}
