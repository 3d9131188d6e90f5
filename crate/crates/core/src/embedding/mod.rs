//! Text-embedding providers, vector arithmetic and the embedding cache.

mod cache;
mod remote;
mod stub;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{cache_get_or_embed, CacheKey, EmbeddingCache};
pub use remote::RemoteEmbedder;
pub use stub::StubEmbedder;

use crate::http;
use crate::sync::Semaphore;

const NORM_TOLERANCE: f64 = 1e-4;

/// Whether a provider talks to a remote service or runs a deterministic stub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbedError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited by provider (retry after {retry_after_secs:?}s)")]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("provider returned HTTP {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cache I/O: {0}")]
    Cache(String),
}

impl EmbedError {
    fn retryable(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

impl From<http::HttpFailure> for EmbedError {
    fn from(f: http::HttpFailure) -> Self {
        match f {
            http::HttpFailure::Transport(m) => EmbedError::Transport(m),
            http::HttpFailure::RateLimited { retry_after_secs } => EmbedError::RateLimited { retry_after_secs },
            http::HttpFailure::Status { status, body } => EmbedError::Provider { status, body },
            http::HttpFailure::Decode(m) => EmbedError::InvalidVector(m),
        }
    }
}

/// Fixed-length float vector, optionally flagged as unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector("non-finite component".into()));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Builds and L2-normalizes.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbedError> {
        Self::new(values)?.normalize()
    }

    pub fn normalize(mut self) -> Result<Self, EmbedError> {
        let n = l2_norm(&self.values);
        if n == 0.0 {
            return Err(EmbedError::InvalidVector("zero vector".into()));
        }
        for v in &mut self.values {
            *v = (*v as f64 / n) as f32;
        }
        debug_assert!((l2_norm(&self.values) - 1.0).abs() < NORM_TOLERANCE);
        self.normalized = true;
        Ok(self)
    }

    /// Wraps values already known to be unit length, verifying the claim.
    pub(crate) fn assume_normalized(values: Vec<f32>) -> Result<Self, EmbedError> {
        let v = Self::new(values)?;
        if (l2_norm(&v.values) - 1.0).abs() >= NORM_TOLERANCE {
            return Err(EmbedError::InvalidVector(
                "vector flagged normalized is not unit length".into(),
            ));
        }
        Ok(Self { normalized: true, ..v })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine from a dot product and the two norms, clamped to [-1, 1].
#[inline]
pub(crate) fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (l2_norm(&a.values), l2_norm(&b.values));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::InvalidVector("zero vector".into()));
    }
    Ok(cosine_from_parts(dot(&a.values, &b.values), na, nb))
}

fn default_batch_size() -> usize {
    64
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_parallelism() -> usize {
    4
}
fn default_retry_base_ms() -> u64 {
    200
}
fn default_dim() -> usize {
    256
}

/// Embedding provider configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_name: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Seed of the stub embedder's hash functions.
    #[serde(default)]
    pub seed: u64,
    /// Environment variable holding a bearer token for remote providers.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Maximum concurrent provider calls.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl EmbedderSpec {
    pub fn stub(model_name: impl Into<String>, dim: usize) -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint: None,
            model_name: model_name.into(),
            dim,
            batch_size: default_batch_size(),
            timeout_ms: default_timeout_ms(),
            seed: 0,
            api_key_env: None,
            parallelism: default_parallelism(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    pub fn remote(model_name: impl Into<String>, endpoint: impl Into<String>, dim: usize) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Self::stub(model_name, dim)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::Config("dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be positive".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(EmbedError::Config("remote embedder requires an endpoint".into()));
        }
        Ok(())
    }
}

/// Reachability of a provider as reported by health checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeStatus {
    Ok,
    Unreachable,
    Disabled,
}

/// One text-embedding backend. `embed_raw` is a single provider call over at
/// most `spec().batch_size` texts and returns unnormalized vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn spec(&self) -> &EmbedderSpec;
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
    fn probe(&self) -> ProbeStatus {
        ProbeStatus::Ok
    }
}

/// Precomputed vectors keyed by exact text; for fixtures and offline runs.
pub struct LookupEmbedder {
    spec: EmbedderSpec,
    table: HashMap<String, Vec<f32>>,
}

impl LookupEmbedder {
    pub fn new(model_name: impl Into<String>, dim: usize, table: HashMap<String, Vec<f32>>) -> Self {
        Self {
            spec: EmbedderSpec::stub(model_name, dim),
            table,
        }
    }
}

impl EmbeddingProvider for LookupEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EmbedError::InvalidInput(format!("no vector for text {t:?}")))
            })
            .collect()
    }
}

/// Builds the provider described by `spec`.
pub fn build_provider(spec: &EmbedderSpec) -> Result<Arc<dyn EmbeddingProvider>, EmbedError> {
    spec.validate()?;
    Ok(match spec.kind {
        ProviderKind::Stub => Arc::new(StubEmbedder::new(spec.clone())),
        ProviderKind::Remote => Arc::new(RemoteEmbedder::new(spec.clone())?),
    })
}

struct EmbedderInner {
    provider: Arc<dyn EmbeddingProvider>,
    cache: Option<Arc<EmbeddingCache>>,
    calls: AtomicUsize,
    limit: Semaphore,
}

/// Handle combining a provider, its concurrency bound, a call counter and an
/// optional cache. Cheap to clone.
#[derive(Clone)]
pub struct Embedder {
    inner: Arc<EmbedderInner>,
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>) -> Self {
        let parallelism = provider.spec().parallelism;
        Self {
            inner: Arc::new(EmbedderInner {
                provider,
                cache: None,
                calls: AtomicUsize::new(0),
                limit: Semaphore::new(parallelism),
            }),
        }
    }

    pub fn from_spec(spec: &EmbedderSpec) -> Result<Self, EmbedError> {
        Ok(Self::new(build_provider(spec)?))
    }

    pub fn with_cache(self, cache: Arc<EmbeddingCache>) -> Self {
        let inner = Arc::try_unwrap(self.inner).unwrap_or_else(|arc| EmbedderInner {
            provider: arc.provider.clone(),
            cache: arc.cache.clone(),
            calls: AtomicUsize::new(arc.calls.load(Ordering::SeqCst)),
            limit: Semaphore::new(arc.provider.spec().parallelism),
        });
        Self {
            inner: Arc::new(EmbedderInner {
                cache: Some(cache),
                ..inner
            }),
        }
    }

    pub fn spec(&self) -> &EmbedderSpec {
        self.inner.provider.spec()
    }

    pub fn cache(&self) -> Option<&Arc<EmbeddingCache>> {
        self.inner.cache.as_ref()
    }

    /// Number of provider calls made through this handle.
    pub fn provider_calls(&self) -> usize {
        self.inner.calls.load(Ordering::SeqCst)
    }

    pub fn probe(&self) -> ProbeStatus {
        self.inner.provider.probe()
    }

    /// Embeds through the cache when one is attached.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        match &self.inner.cache {
            Some(cache) => cache_get_or_embed(cache, self, texts),
            None => embed_batch(self, texts),
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    fn call_provider(&self, chunk: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let spec = self.spec();
        http::with_retries(
            3,
            Duration::from_millis(spec.retry_base_ms),
            EmbedError::retryable,
            || {
                let _permit = self.inner.limit.acquire();
                self.inner.calls.fetch_add(1, Ordering::SeqCst);
                self.inner.provider.embed_raw(chunk)
            },
        )
    }
}

/// Embeds `texts` with the provider directly (no cache): one call per
/// `batch_size` chunk, order-preserving, every vector L2-normalized.
pub fn embed_batch(embedder: &Embedder, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::InvalidInput("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::InvalidInput(format!("text {i} is empty")));
    }
    let spec = embedder.spec();
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(spec.batch_size) {
        let raw = embedder.call_provider(chunk)?;
        if raw.len() != chunk.len() {
            return Err(EmbedError::InvalidVector(format!(
                "provider returned {} vectors for {} texts",
                raw.len(),
                chunk.len()
            )));
        }
        for values in raw {
            if values.len() != spec.dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: spec.dim,
                    found: values.len(),
                });
            }
            out.push(EmbeddingVector::normalized(values)?);
        }
    }
    Ok(out)
}
