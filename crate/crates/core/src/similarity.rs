//! Cosine scoring and plain top-K retrieval (the undebiased baseline).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{ImageRecord, QueryRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
}

impl ScoredImage {
    pub fn new(image_id: impl Into<String>, score: f64) -> Self {
        Self { image_id: image_id.into(), score }
    }
}

/// Ranking order: score descending, then image id ascending.
pub fn rank_order(a: &ScoredImage, b: &ScoredImage) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// The images returned for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBag {
    pub query_id: String,
    pub items: Vec<ScoredImage>,
    /// Configured bag size; may exceed `items.len()` when candidates ran out.
    pub k: usize,
}

impl RetrievalBag {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|s| s.image_id.as_str())
    }

    pub(crate) fn sorted(query_id: &str, mut items: Vec<ScoredImage>, k: usize) -> Self {
        items.sort_by(rank_order);
        Self { query_id: query_id.to_string(), items, k }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine score of every image against the query, in ranking order.
pub fn score_all(query: &QueryRecord, images: &[ImageRecord]) -> Result<Vec<ScoredImage>> {
    let mut scored = images
        .iter()
        .map(|im| Ok(ScoredImage::new(im.id.clone(), cosine(&query.embedding, &im.embedding)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(rank_order);
    Ok(scored)
}

pub fn rank_top_k(query: &QueryRecord, images: &[ImageRecord], k: usize) -> Result<RetrievalBag> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if images.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let mut scored = score_all(query, images)?;
    scored.truncate(k);
    Ok(RetrievalBag { query_id: query.id.clone(), items: scored, k })
}
