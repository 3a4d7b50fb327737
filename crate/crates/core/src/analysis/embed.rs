//! Sentence embeddings of descriptions.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{hash_str, rng_for};

pub const DEFAULT_DIMENSION: usize = 768;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("expected {expected}-dimensional vectors, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("provider returned {found} vectors for {expected} texts")]
    CountMismatch { expected: usize, found: usize },
    #[error("embedding has non-finite values")]
    NonFinite,
    #[error("cannot mix providers {0:?} and {1:?} in one analysis")]
    MixedProviders(String, String),
    #[error("embedding transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider: String,
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identifies the model or featurizer; vectors from different tags never mix.
    fn tag(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

/// Embed `texts` and check count, dimension and finiteness.
pub fn embed_descriptions(
    provider: &dyn EmbeddingProvider,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyText);
    }
    let raw = provider.embed_batch(texts)?;
    if raw.len() != texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: texts.len(),
            found: raw.len(),
        });
    }
    let tag = provider.tag();
    raw.into_iter()
        .map(|values| {
            if values.len() != provider.dimension() {
                return Err(EmbedError::DimensionMismatch {
                    expected: provider.dimension(),
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite);
            }
            Ok(EmbeddingVector {
                values,
                provider: tag.clone(),
            })
        })
        .collect()
}

/// Stack vectors into design-matrix rows, refusing mixed providers or sizes.
pub fn design_matrix(vectors: &[EmbeddingVector]) -> Result<Vec<Vec<f64>>, EmbedError> {
    let Some(first) = vectors.first() else {
        return Ok(Vec::new());
    };
    for v in vectors {
        if v.provider != first.provider {
            return Err(EmbedError::MixedProviders(
                first.provider.clone(),
                v.provider.clone(),
            ));
        }
        if v.values.len() != first.values.len() {
            return Err(EmbedError::DimensionMismatch {
                expected: first.values.len(),
                found: v.values.len(),
            });
        }
    }
    Ok(vectors.iter().map(|v| v.values.clone()).collect())
}

/// Deterministic, provider-free featurizer: counts of lowercased words and
/// word bigrams, each hashed feature projected through a seeded Gaussian
/// direction, summed and L2-normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfflineFeaturizer {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for OfflineFeaturizer {
    fn default() -> Self {
        OfflineFeaturizer {
            dimension: DEFAULT_DIMENSION,
            seed: 0x0E3B_ED00,
        }
    }
}

fn tokens(text: &str) -> BTreeMap<String, usize> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let mut counts = BTreeMap::new();
    for w in &words {
        *counts.entry(w.clone()).or_default() += 1;
    }
    for pair in words.windows(2) {
        *counts
            .entry(format!("{} {}", pair[0], pair[1]))
            .or_default() += 1;
    }
    counts
}

impl OfflineFeaturizer {
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        for (token, count) in tokens(text) {
            let mut rng = rng_for(self.seed, &[hash_str(&token)]);
            for v in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += count as f64 * z;
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        out
    }
}

impl EmbeddingProvider for OfflineFeaturizer {
    fn tag(&self) -> String {
        format!("offline-hash-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}
