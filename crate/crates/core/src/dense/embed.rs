//! Text embedders: a deterministic offline hashing embedder and an HTTP
//! client for embedding servers that speak the common `/embeddings` shape.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net;
use crate::sparse::analyzer::terms;

pub const DEFAULT_DIM: usize = 256;
pub const REMOTE_BATCH_LIMIT: usize = 128;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("network error: {0}")]
    Network(String),
    #[error("embedding server returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("embedding dimension {got} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("invalid embedder configuration: {0}")]
    Config(String),
}

/// Fixed-length real vector; non-zero embedder output is unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    /// Scales to unit length; the zero vector is left as is.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for x in &mut self.0 {
                *x = (*x as f64 / n) as f32;
            }
        }
        self
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    /// Cosine similarity; 0 when either side is zero.
    pub fn cosine(&self, other: &Self) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            (self.dot(other) / denom).clamp(-1.0, 1.0)
        }
    }
}

/// Identifies the embedding space a store was built with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hash {
        dim: usize,
    },
    Remote {
        dim: usize,
        model: String,
        endpoint: String,
    },
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Hash { dim } | EmbedderSpec::Remote { dim, .. } => *dim,
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            EmbedderSpec::Hash { dim } => format!("hash:{dim}"),
            EmbedderSpec::Remote { dim, model, endpoint } => format!("remote:{model}@{endpoint}:{dim}"),
        }
    }
}

pub trait Embedder: Send + Sync {
    fn spec(&self) -> EmbedderSpec;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn dim(&self) -> usize {
        self.spec().dim()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| EmbedError::Malformed("embedder returned no vector".into()))
    }
}

/// Feature hashing over analyzer terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 8 {
            return Err(EmbedError::Config(format!("hash embedder dimension must be >= 8, got {dim}")));
        }
        Ok(HashEmbedder { dim })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: DEFAULT_DIM }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Each term lands in bucket `h mod dim` with sign `-` when bit 63 of its
/// FNV-1a hash is set; counts accumulate, then the vector is normalized.
pub fn embed_hash(text: &str, dim: usize) -> EmbeddingVector {
    let mut v = vec![0f64; dim];
    for term in terms(text) {
        let h = fnv1a64(term.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return EmbeddingVector::zeros(dim);
    }
    EmbeddingVector(v.into_iter().map(|x| (x / norm) as f32).collect())
}

impl Embedder for HashEmbedder {
    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::Hash { dim: self.dim }
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| embed_hash(t, self.dim)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub dim: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

/// Client for an `/embeddings` endpoint: `{model, input}` in,
/// `{data: [{index, embedding}]}` out.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("dim", &self.config.dim)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbedError> {
        if config.endpoint.trim().is_empty() {
            return Err(EmbedError::Config("remote embedder requires an explicit endpoint".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(RemoteEmbedder { config, client })
    }

    fn embed_one_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = EmbeddingRequest {
            model: &self.config.model,
            input: texts,
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        net::record_outbound_request();
        let resp = req.send().map_err(|e| EmbedError::Network(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(EmbedError::HttpStatus {
                status: status.as_u16(),
                body: net::excerpt(&body),
            });
        }
        let parsed: EmbeddingResponse = resp.json().map_err(|e| EmbedError::Malformed(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(EmbedError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for item in parsed.data {
            if item.embedding.len() != self.config.dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: self.config.dim,
                    got: item.embedding.len(),
                });
            }
            let slot = slots
                .get_mut(item.index)
                .ok_or_else(|| EmbedError::Malformed(format!("index {} out of range", item.index)))?;
            *slot = Some(EmbeddingVector(item.embedding).normalized());
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| EmbedError::Malformed(format!("missing embedding for index {i}"))))
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::Remote {
            dim: self.config.dim,
            model: self.config.model.clone(),
            endpoint: self.config.endpoint.clone(),
        }
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let batches: Vec<&[&str]> = texts.chunks(REMOTE_BATCH_LIMIT).collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.config.max_in_flight.max(1)) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|b| s.spawn(move || self.embed_one_batch(b))).collect();
                handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}
