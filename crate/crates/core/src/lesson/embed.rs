use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding backend failed: {0}")]
    Backend(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Maps text to a fixed-dimension vector. Identical input must give identical
/// output.
pub trait Embedder<S>: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Vec<S>, EmbedError>;

    /// True once the embedder has switched to a fallback backend.
    fn degraded(&self) -> bool {
        false
    }
}

/// Cosine similarity. A zero vector on either side gives 0.
///
/// # Panics
///
/// If the vectors differ in length.
pub fn cosine<S: Real>(a: &[S], b: &[S]) -> S {
    assert_eq!(a.len(), b.len(), "cosine of vectors with different dimensions");
    let (mut dot, mut na, mut nb) = (S::zero(), S::zero(), S::zero());
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na = na + x * x;
        nb = nb + y * y;
    }
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    c.max(-S::one()).min(S::one())
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Offline embedder: a bag of hashed tokens, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed_text<S: Real>(&self, text: &str) -> Vec<S> {
        let mut v = vec![S::zero(); self.dim];
        for token in tokenize(text) {
            let b = self.bucket(&token);
            v[b] = v[b] + S::one();
        }
        let norm = v.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt();
        if norm > S::zero() {
            for x in &mut v {
                *x = *x / norm;
            }
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl<S: Real> Embedder<S> for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<S>, EmbedError> {
        Ok(self.embed_text(text))
    }
}

/// Uses `primary` until it fails once, then [`HashEmbedder`] of the same
/// dimension for every later call.
pub struct FallbackEmbedder<P> {
    primary: P,
    fallback: HashEmbedder,
    degraded: AtomicBool,
    last_error: Mutex<Option<EmbedError>>,
}

impl<P> FallbackEmbedder<P> {
    pub fn new<S>(primary: P) -> Self
    where
        P: Embedder<S>,
    {
        let fallback = HashEmbedder::new(primary.dim());
        Self {
            primary,
            fallback,
            degraded: AtomicBool::new(false),
            last_error: Mutex::new(None),
        }
    }

    /// The error that triggered the switch, if any.
    pub fn failure(&self) -> Option<EmbedError> {
        self.last_error.lock().unwrap().clone()
    }
}

impl<S: Real, P: Embedder<S>> Embedder<S> for FallbackEmbedder<P> {
    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<S>, EmbedError> {
        if !self.degraded.load(Ordering::Acquire) {
            match self.primary.embed(text) {
                Ok(v) if v.len() == self.fallback.dim => return Ok(v),
                Ok(v) => {
                    *self.last_error.lock().unwrap() =
                        Some(EmbedError::Dimension { expected: self.fallback.dim, got: v.len() });
                }
                Err(e) => {
                    log::warn!("embedder failed, switching to hashed fallback: {e}");
                    *self.last_error.lock().unwrap() = Some(e);
                }
            }
            self.degraded.store(true, Ordering::Release);
        }
        Ok(self.fallback.embed_text(text))
    }

    fn degraded(&self) -> bool {
        self.degraded.load(Ordering::Acquire)
    }
}
