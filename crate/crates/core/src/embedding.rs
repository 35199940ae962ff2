//! Embedding providers.
//!
//! Vectors leaving [`embed`] are always L2-normalized, whatever the provider
//! returned. The local hash embedder gives stable, content-sensitive
//! geometry without any model: every token maps to a seeded pseudo-random
//! unit vector and a text is the normalized mean of its token vectors.

use std::env;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{self, HttpFailure};
use crate::retry::RetryPolicy;
use crate::text::tokenize_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteHttp,
    LocalDeterministic,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed an empty text")]
    EmptyText,
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("provider declared dimension {expected} but returned {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider returned a non-finite or zero vector")]
    Degenerate,
    #[error("embedding provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: HttpFailure,
    },
    #[error("embedding provider is not configured: {0}")]
    Config(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn kind(&self) -> ProviderKind;
    /// Raw vectors, one per text. Normalization happens in [`embed`].
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Embeds `texts` and L2-normalizes every vector.
pub fn embed(texts: &[String], provider: &dyn EmbeddingProvider) -> Result<Vec<Vec<f32>>, EmbedError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText);
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let raw = provider.embed_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: texts.len(),
            got: raw.len(),
        });
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != provider.dimension() {
                return Err(EmbedError::DimensionMismatch {
                    expected: provider.dimension(),
                    got: v.len(),
                });
            }
            normalize(v).ok_or(EmbedError::Degenerate)
        })
        .collect()
}

pub fn embed_one(text: &str, provider: &dyn EmbeddingProvider) -> Result<Vec<f32>, EmbedError> {
    Ok(embed(&[text.to_string()], provider)?.remove(0))
}

/// Scales `v` to unit length. `None` for zero or non-finite input.
pub fn normalize(mut v: Vec<f32>) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 || v.iter().any(|x| !x.is_finite()) {
        return None;
    }
    for x in &mut v {
        *x = (*x as f64 / norm) as f32;
    }
    Some(v)
}

/// Cosine in f64. Zero vectors score 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

const HASH_PREFIX: &str = "local-hash-v1";

/// Deterministic token-hash embedder.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
    seed: u64,
    id: String,
}

impl HashEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;
    pub const DEFAULT_SEED: u64 = 0x5EED;

    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            seed,
            id: format!("{HASH_PREFIX}:{dimension}:{seed}"),
        }
    }

    /// Rebuilds the embedder an index was built with, from its provider id.
    pub fn from_provider_id(id: &str) -> Option<Self> {
        let mut parts = id.split(':');
        if parts.next()? != HASH_PREFIX {
            return None;
        }
        let dimension = parts.next()?.parse().ok().filter(|d| *d > 0)?;
        let seed = parts.next()?.parse().ok()?;
        parts.next().is_none().then(|| Self::new(dimension, seed))
    }

    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        loop {
            let v: Vec<f32> = (0..self.dimension)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            if let Some(unit) = normalize(v) {
                return unit;
            }
        }
    }

    fn text_vector(&self, text: &str) -> Vec<f32> {
        let tokens = match tokenize_name(text) {
            Ok(t) => t.tokens,
            Err(_) => vec![text.trim().to_lowercase()],
        };
        let mut sum = vec![0f64; self.dimension];
        for t in &tokens {
            for (acc, x) in sum.iter_mut().zip(self.token_vector(t)) {
                *acc += x as f64;
            }
        }
        let mean: Vec<f32> = sum.iter().map(|x| (*x / tokens.len() as f64) as f32).collect();
        normalize(mean).unwrap_or_else(|| self.token_vector(&tokens[0]))
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION, Self::DEFAULT_SEED)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::LocalDeterministic
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.text_vector(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    pub model: String,
    pub dimension: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout_secs() -> u64 {
    30
}

impl RemoteEmbedderConfig {
    pub const DEFAULT_DIMENSION: usize = 1024;

    /// Reads EMBED_API_BASE, EMBED_API_KEY, EMBED_MODEL and the optional
    /// EMBED_DIMENSION.
    pub fn from_env() -> Result<Self, EmbedError> {
        let var = |name: &str| env::var(name).ok().filter(|v| !v.is_empty());
        let base_url = var("EMBED_API_BASE").ok_or_else(|| EmbedError::Config("EMBED_API_BASE is not set".into()))?;
        let model = var("EMBED_MODEL").ok_or_else(|| EmbedError::Config("EMBED_MODEL is not set".into()))?;
        let dimension = match var("EMBED_DIMENSION") {
            Some(d) => d
                .parse()
                .ok()
                .filter(|d| *d > 0)
                .ok_or_else(|| EmbedError::Config(format!("EMBED_DIMENSION {d:?} is not a positive integer")))?,
            None => Self::DEFAULT_DIMENSION,
        };
        Ok(Self {
            base_url,
            api_key: var("EMBED_API_KEY"),
            model,
            dimension,
            timeout_secs: default_timeout_secs(),
            retry: RetryPolicy::default(),
        })
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    agent: ureq::Agent,
    id: String,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Self {
        let agent = http::agent(Duration::from_secs(config.timeout_secs));
        let id = format!("remote:{}", config.model);
        Self { config, agent, id }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::RemoteHttp
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let url = http::join_url(&self.config.base_url, "embeddings");
        let body = EmbedRequest {
            model: &self.config.model,
            input: texts,
        };
        let resp: EmbedResponse = self
            .config
            .retry
            .run(|_| {
                http::post_json(&self.agent, &url, self.config.api_key.as_deref(), &body)
                    .map_err(HttpFailure::classify)
            })
            .map_err(|e| EmbedError::Provider {
                attempts: e.attempts,
                source: e.last,
            })?;
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }
}
