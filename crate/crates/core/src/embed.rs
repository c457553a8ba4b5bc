//! Text encoders.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::EmbeddingStore;
use crate::vector::{normalize, EmbeddingVector, VectorError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedder transport error: {0}")]
    Transport(String),
    #[error("embedder returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed embedder response: {0}")]
    Malformed(String),
    #[error("no embedding for text {0:?}")]
    UnknownText(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

/// Maps texts to unit vectors in the shared embedding space.
pub trait TextEmbedder: Send + Sync {
    /// One unit-norm row per input text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Whether `embed` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }

    fn id(&self) -> String;
}

/// Deterministic embedder for hermetic runs: each text hashes to a seed for
/// a Gaussian direction. Specific texts can be pinned to chosen vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    pinned: HashMap<String, EmbeddingVector>,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "mock embedder needs a positive dimension");
        Self {
            dim,
            pinned: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pins `text` to `normalize(vector)`.
    pub fn pin(mut self, text: &str, vector: &[f32]) -> Result<Self, VectorError> {
        let v = normalize(&EmbeddingVector::new(vector.to_vec())?)?;
        if v.dim() != self.dim {
            return Err(VectorError::DimMismatch {
                left: self.dim,
                right: v.dim(),
            });
        }
        self.pinned.insert(text.to_string(), v);
        Ok(self)
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        if let Some(v) = self.pinned.get(text) {
            return v.clone();
        }
        let digest = Sha256::digest(text.as_bytes());
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        EmbeddingVector::new(raw.iter().map(|x| (x / n) as f32).collect())
            .expect("gaussian draws are finite")
    }
}

impl TextEmbedder for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn id(&self) -> String {
        format!("mock:{}", self.dim)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

/// Client for the `/embed` HTTP contract.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    base: String,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            base: base_url.trim_end_matches('/').to_string(),
        })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp = self
            .client
            .post(format!("{}/embed", self.base))
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| EmbedError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbedError::Status {
                status: status.as_u16(),
                body: body.chars().take(512).collect(),
            });
        }
        let parsed: EmbedResponse =
            serde_json::from_str(&body).map_err(|e| EmbedError::Malformed(e.to_string()))?;
        if parsed.embeddings.len() != texts.len() {
            return Err(EmbedError::Malformed(format!(
                "{} embeddings for {} texts",
                parsed.embeddings.len(),
                texts.len()
            )));
        }
        parsed
            .embeddings
            .into_iter()
            .map(|row| {
                if row.len() != parsed.dim {
                    return Err(EmbedError::Malformed(format!(
                        "row of length {} in a dim-{} response",
                        row.len(),
                        parsed.dim
                    )));
                }
                Ok(normalize(&EmbeddingVector::new(row)?)?)
            })
            .collect()
    }

    fn id(&self) -> String {
        format!("http:{}", self.base)
    }
}

/// Serves precomputed embeddings from a store whose ids are the exact texts.
pub struct StoreEmbedder {
    store: EmbeddingStore,
    label: String,
}

impl StoreEmbedder {
    pub fn new(store: EmbeddingStore, label: impl Into<String>) -> Self {
        Self {
            store,
            label: label.into(),
        }
    }
}

impl TextEmbedder for StoreEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                let row = self.store.get(t).map_err(|_| EmbedError::UnknownText(t.clone()))?;
                Ok(normalize(&EmbeddingVector::new(row.to_vec())?)?)
            })
            .collect()
    }

    fn id(&self) -> String {
        format!("store:{}", self.label)
    }
}

/// Memoizes another embedder; repeated texts are encoded once.
pub struct CachingEmbedder<E> {
    inner: E,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<E: TextEmbedder> CachingEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            memo: Mutex::new(HashMap::new()),
        }
    }
}

impl<E: TextEmbedder> TextEmbedder for CachingEmbedder<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let missing: Vec<String> = {
            let memo = self.memo.lock().expect("memo poisoned");
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .filter(|t| !memo.contains_key(*t) && seen.insert(t.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed(&missing)?;
            let mut memo = self.memo.lock().expect("memo poisoned");
            memo.extend(missing.into_iter().zip(fresh));
        }
        let memo = self.memo.lock().expect("memo poisoned");
        Ok(texts.iter().map(|t| memo[t].clone()).collect())
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for Box<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed(texts)
    }

    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for &T {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed(texts)
    }

    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }

    fn id(&self) -> String {
        (**self).id()
    }
}
