//! Text embedding behind a pluggable interface, cosine similarity, and a
//! flat exact-search index.
//!
//! The default embedder is a deterministic feature-hashing bag of words:
//! lowercase the text, split on non-alphanumeric runs, hash each token with
//! FNV-1a (64-bit), bucket by `hash % D`, count tokens per bucket, and
//! L2-normalize. Empty text maps to the all-zero sentinel vector. A remote
//! embedder behind the same interface is available for realistic runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::*;

/// Minimum dimension accepted for the hashing embedder.
pub const MIN_HASH_DIMENSION: usize = 8;

/// Environment variable holding the bearer token for remote calls.
pub const API_KEY_ENV: &str = "TRAD_API_KEY";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate key id in index: {0}")]
    DuplicateKey(String),
    #[error("invalid embedder spec: {0}")]
    InvalidSpec(String),
    #[error("remote embedding failed: {0}")]
    Remote(String),
    #[error("missing {API_KEY_ENV} for remote embedding")]
    Auth,
}

/// A dense embedding, either all-zero (empty-text sentinel) or unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Which encoder to use and its output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    HashLocal {
        dimension: usize,
    },
    Remote {
        dimension: usize,
        endpoint: String,
        model: String,
        /// Upper bound on texts per request; requests are issued one batch
        /// at a time so in-flight work stays bounded.
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
}

fn default_batch_size() -> usize {
    64
}

impl EmbedderSpec {
    pub fn hash_local(dimension: usize) -> Self {
        EmbedderSpec::HashLocal { dimension }
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbedderSpec::HashLocal { dimension } => *dimension,
            EmbedderSpec::Remote { dimension, .. } => *dimension,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        match self {
            EmbedderSpec::HashLocal { dimension } if *dimension < MIN_HASH_DIMENSION => {
                Err(EmbedError::InvalidSpec(format!(
                    "hash-local dimension must be >= {MIN_HASH_DIMENSION}, got {dimension}"
                )))
            }
            EmbedderSpec::Remote { dimension, .. } if *dimension == 0 => Err(
                EmbedError::InvalidSpec("remote dimension must be positive".into()),
            ),
            _ => Ok(()),
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Lowercased tokens split on non-alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn hash_embed(text: &str, dimension: usize) -> EmbeddingVector {
    let mut values = vec![0.0f64; dimension];
    for token in tokenize(text) {
        let bucket = (fnv1a64(token.as_bytes()) % dimension as u64) as usize;
        values[bucket] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in values.iter_mut() {
            *v /= norm;
        }
    }
    EmbeddingVector { values }
}

/// Embed one text. Deterministic for the hashing embedder.
pub fn embed(spec: &EmbedderSpec, text: &str) -> Result<EmbeddingVector, EmbedError> {
    spec.validate()?;
    match spec {
        EmbedderSpec::HashLocal { dimension } => Ok(hash_embed(text, *dimension)),
        EmbedderSpec::Remote { .. } => {
            let mut out = embed_batch(spec, &[text.to_string()])?;
            Ok(out.remove(0))
        }
    }
}

/// Embed many texts, batching remote requests.
pub fn embed_batch(spec: &EmbedderSpec, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    spec.validate()?;
    match spec {
        EmbedderSpec::HashLocal { dimension } => {
            let dim = *dimension;
            Ok(texts.par_iter().map(|t| hash_embed(t, dim)).collect())
        }
        EmbedderSpec::Remote {
            dimension,
            endpoint,
            model,
            batch_size,
        } => {
            let key = std::env::var(API_KEY_ENV).map_err(|_| EmbedError::Auth)?;
            let client = reqwest::blocking::Client::new();
            let mut out = Vec::with_capacity(texts.len());
            for chunk in texts.chunks((*batch_size).max(1)) {
                let body = serde_json::json!({ "model": model, "input": chunk });
                let resp = client
                    .post(endpoint)
                    .bearer_auth(&key)
                    .json(&body)
                    .send()
                    .map_err(|e| EmbedError::Remote(e.to_string()))?;
                if !resp.status().is_success() {
                    return Err(EmbedError::Remote(format!("status {}", resp.status())));
                }
                let value: serde_json::Value =
                    resp.json().map_err(|e| EmbedError::Remote(e.to_string()))?;
                for row in parse_remote_vectors(&value, chunk.len())? {
                    if row.len() != *dimension {
                        return Err(EmbedError::DimensionMismatch {
                            expected: *dimension,
                            got: row.len(),
                        });
                    }
                    let mut v = EmbeddingVector { values: row };
                    let norm = v.l2_norm();
                    if norm > 0.0 {
                        for x in v.values.iter_mut() {
                            *x /= norm;
                        }
                    }
                    out.push(v);
                }
            }
            Ok(out)
        }
    }
}

/// Accepts either `{"embeddings": [[..]]}` or the `{"data": [{"embedding": [..]}]}`
/// shape; vectors must come back in input order.
fn parse_remote_vectors(value: &serde_json::Value, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let rows: Option<Vec<Vec<f64>>> = if let Some(arr) = value.get("embeddings") {
        serde_json::from_value(arr.clone()).ok()
    } else if let Some(arr) = value.get("data").and_then(|d| d.as_array()) {
        arr.iter()
            .map(|item| {
                item.get("embedding")
                    .and_then(|e| serde_json::from_value::<Vec<f64>>(e.clone()).ok())
            })
            .collect()
    } else {
        None
    };
    let rows = rows.ok_or_else(|| EmbedError::Remote("unrecognized response shape".into()))?;
    if rows.len() != expected {
        return Err(EmbedError::Remote(format!(
            "expected {expected} vectors, got {}",
            rows.len()
        )));
    }
    Ok(rows)
}

/// Cosine similarity; zero by convention when either vector is all-zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dimension(),
            got: b.dimension(),
        });
    }
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// A flat exact-search index: every entry scored on every query.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    entries: Vec<(String, EmbeddingVector)>,
}

impl VectorIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector(&self, key_id: &str) -> Option<&EmbeddingVector> {
        self.entries.iter().find(|(k, _)| k == key_id).map(|(_, v)| v)
    }
}

/// Embed each `(key_id, text)` item into a fresh index.
pub fn build_index(items: &[(String, String)], spec: &EmbedderSpec) -> Result<VectorIndex, EmbedError> {
    spec.validate()?;
    let mut seen = std::collections::BTreeSet::new();
    for (key, _) in items {
        if !seen.insert(key.clone()) {
            return Err(EmbedError::DuplicateKey(key.clone()));
        }
    }
    let texts: Vec<String> = items.iter().map(|(_, t)| t.clone()).collect();
    let vectors = embed_batch(spec, &texts)?;
    let entries = items
        .iter()
        .map(|(k, _)| k.clone())
        .zip(vectors)
        .collect();
    Ok(VectorIndex {
        dimension: spec.dimension(),
        entries,
    })
}

/// Exact top-k by cosine, ties broken by ascending key id.
pub fn search(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<(String, f64)>, EmbedError> {
    if query.dimension() != index.dimension {
        return Err(EmbedError::DimensionMismatch {
            expected: index.dimension,
            got: query.dimension(),
        });
    }
    let mut scored: Vec<(String, f64)> = index
        .entries
        .par_iter()
        .map(|(key, v)| (key.clone(), cosine(query, v).expect("dims checked")))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}
