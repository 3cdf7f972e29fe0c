//! Text embeddings and cosine similarity.
//!
//! The built-in [`HashedNgramEmbedder`] maps case-folded, whitespace-collapsed
//! text (padded with one space on each side) to a term-frequency vector of
//! character 3-grams hashed into a fixed number of buckets, then L2-normalizes
//! it. The hash is 64-bit FNV-1a with the offset basis XOR-ed with
//! [`DEFAULT_HASH_SEED`], so vectors are identical across runs and platforms.
//! [`HttpEmbedder`] talks to a remote service with the same contract.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIMENSION: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0x6d65_7461_666f_7267;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding service returned {got} vectors for {expected} inputs")]
    BadResponse { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Returns a unit-norm copy; the zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|x| *x /= n);
        }
        self
    }
}

/// `dot(u, v) / (|u| |v|)`, or 0 when either vector is zero.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.0.iter().zip(&v.0) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl HashedNgramEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self::with_seed(dimension, DEFAULT_HASH_SEED)
    }

    pub fn with_seed(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    fn bucket(&self, gram: &[char]) -> usize {
        let mut h = FNV_OFFSET ^ self.seed;
        for c in gram {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(FNV_PRIME);
            }
        }
        (h % self.dimension as u64) as usize
    }
}

impl Embedder for HashedNgramEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut chars: Vec<char> = vec![' '];
        for word in text.split_whitespace() {
            chars.extend(word.chars().flat_map(char::to_lowercase));
            chars.push(' ');
        }
        let mut v = vec![0.0; self.dimension];
        if chars.len() < 3 {
            return Ok(EmbeddingVector(v));
        }
        for gram in chars.windows(3) {
            v[self.bucket(gram)] += 1.0;
        }
        Ok(EmbeddingVector(v).normalized())
    }
}

/// Caps the number of requests in flight across threads sharing a handle.
#[derive(Debug)]
pub struct InflightGate {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InflightGate {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
            while *n >= self.cap {
                n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
            }
            *n += 1;
        }
        let out = f();
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.freed.notify_one();
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    pub endpoint: String,
    #[serde(default)]
    pub token: Option<String>,
    pub dimension: usize,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_in_flight: usize,
}

fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_concurrency() -> usize {
    4
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote embedder: `POST {"inputs": [...]}` returning `{"vectors": [[...]]}`.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    agent: ureq::Agent,
    gate: InflightGate,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = InflightGate::new(config.max_in_flight);
        Self {
            config,
            agent,
            gate,
        }
    }

    fn post_once(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, (bool, String)> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(tok) = &self.config.token {
            req = req.header("Authorization", &format!("Bearer {tok}"));
        }
        let mut resp = req
            .send_json(EmbedRequest { inputs: texts })
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err((true, format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err((false, format!("HTTP {status}")));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, e.to_string()))?;
        Ok(body.vectors)
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.gate.run(|| self.post_once(texts)) {
                Ok(vectors) => {
                    if vectors.len() != texts.len() {
                        return Err(EmbedError::BadResponse {
                            expected: texts.len(),
                            got: vectors.len(),
                        });
                    }
                    return vectors
                        .into_iter()
                        .map(|v| {
                            if v.len() != self.config.dimension {
                                Err(EmbedError::DimensionMismatch {
                                    left: v.len(),
                                    right: self.config.dimension,
                                })
                            } else {
                                Ok(EmbeddingVector(v).normalized())
                            }
                        })
                        .collect();
                }
                Err((retryable, msg)) => {
                    last = msg;
                    if !retryable {
                        return Err(EmbedError::Transport {
                            attempts: attempt,
                            message: last,
                        });
                    }
                    if attempt < attempts {
                        thread::sleep(Duration::from_millis(
                            self.config.backoff_ms << (attempt - 1),
                        ));
                    }
                }
            }
        }
        Err(EmbedError::Transport {
            attempts,
            message: last,
        })
    }
}
