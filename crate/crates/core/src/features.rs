//! Feature vectors, cosine similarity and the token-hash text encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 256;

/// Prefix marking an opaque image token, e.g. `img:red_alarm_clock`.
pub const IMAGE_PREFIX: &str = "img:";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Dense real feature vector. The all-zero vector is the "no feature" sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
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
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Similarity that maps the error cases (zero sentinel, dimension mismatch) to 0.
pub fn similarity_or_zero(a: &FeatureVector, b: &FeatureVector) -> f64 {
    cosine_similarity(a, b).unwrap_or(0.0)
}

/// 64-bit FNV-1a over the token bytes.
pub fn fnv1a(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn token_bucket(token: &str, dim: usize) -> usize {
    (fnv1a(token) % dim as u64) as usize
}

/// Text/image encoder. Implementations must be deterministic.
pub trait EncoderOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_text(&self, text: &str) -> FeatureVector;
    fn encode_query_image(&self, token: &str) -> FeatureVector;
}

/// Bag-of-tokens feature hashing encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl EncoderOracle for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, text: &str) -> FeatureVector {
        let mut values = vec![0.0; self.dim];
        for token in tokenize(text) {
            values[token_bucket(&token, self.dim)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        FeatureVector(values)
    }

    fn encode_query_image(&self, token: &str) -> FeatureVector {
        self.encode_text(token.strip_prefix(IMAGE_PREFIX).unwrap_or(token))
    }
}

/// Embeds with the default 256-dimensional hash encoder.
pub fn embed_text(text: &str) -> FeatureVector {
    HashEmbedder::default().encode_text(text)
}

/// Image token for an object whose most frequent caption is `caption`.
pub fn image_token(caption: &str) -> String {
    let words: Vec<String> = tokenize(caption).collect();
    format!("{IMAGE_PREFIX}{}", words.join("_"))
}
