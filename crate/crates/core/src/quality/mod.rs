//! Fused video quality score.
//!
//! Raw scores from a technical and a semantic provider are each passed through
//! a batch-standardized sigmoid, then averaged. The list-wise training losses
//! used to fit such providers live in [`loss`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod loss;
pub mod semantic;

pub use loss::{linear_loss, loss_gradients, rank_loss, total_loss, ScoreLists, DEFAULT_LAMBDA};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("empty score batch")]
    EmptyBatch,
    #[error("non-finite score for {0:?}")]
    NonFinite(String),
    #[error("duplicate video_id {0:?} in batch")]
    DuplicateId(String),
    #[error("provider key sets differ: only technical {only_tech:?}, only semantic {only_sem:?}")]
    KeyMismatch {
        only_tech: Vec<String>,
        only_sem: Vec<String>,
    },
    #[error("score lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("score lists need at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("negative rank weight {0}")]
    NegativeLambda(f64),
}

/// Raw scores from one provider over one evaluation batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScoreBatch {
    pub provider_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RawScoreBatch {
    pub fn new(provider_id: impl Into<String>, entries: Vec<(String, f64)>) -> Result<Self, QualityError> {
        let b = Self {
            provider_id: provider_id.into(),
            entries,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), QualityError> {
        let mut seen = std::collections::HashSet::new();
        for (id, s) in &self.entries {
            if !s.is_finite() {
                return Err(QualityError::NonFinite(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(QualityError::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }

    /// Entries restricted to `ids`, keeping batch order.
    pub fn subset(&self, ids: &std::collections::BTreeSet<String>) -> RawScoreBatch {
        RawScoreBatch {
            provider_id: self.provider_id.clone(),
            entries: self
                .entries
                .iter()
                .filter(|(id, _)| ids.contains(id))
                .cloned()
                .collect(),
        }
    }
}

/// Batch statistics the sigmoid was standardized with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemapContext {
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub source_batch_size: usize,
}

/// Standardizes the batch by its own mean and population standard deviation
/// and squashes through a logistic. A batch with no spread maps to 0.5.
pub fn remap(batch: &RawScoreBatch) -> Result<(BTreeMap<String, f64>, RemapContext), QualityError> {
    if batch.entries.is_empty() {
        return Err(QualityError::EmptyBatch);
    }
    batch.validate()?;
    let n = batch.entries.len() as f64;
    let first = batch.entries[0].1;
    // summation can leave a constant batch with a tiny nonzero spread
    let (mean, std_dev) = if batch.entries.iter().all(|e| e.1 == first) {
        (first, 0.0)
    } else {
        let mean = batch.entries.iter().map(|e| e.1).sum::<f64>() / n;
        let var = batch.entries.iter().map(|e| (e.1 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let out = batch
        .entries
        .iter()
        .map(|(id, s)| {
            let r = if std_dev == 0.0 {
                0.5
            } else {
                1.0 / (1.0 + (-(s - mean) / std_dev).exp())
            };
            (id.clone(), r)
        })
        .collect();
    Ok((
        out,
        RemapContext {
            mean,
            std_dev,
            source_batch_size: batch.entries.len(),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityResult {
    pub video_id: String,
    pub remapped_tech: f64,
    pub remapped_sem: f64,
    pub fused: f64,
}

/// Mean of the two remapped scores, per video, in video-id order.
pub fn fuse(tech: &BTreeMap<String, f64>, sem: &BTreeMap<String, f64>) -> Result<Vec<QualityResult>, QualityError> {
    let only_tech: Vec<String> = tech.keys().filter(|k| !sem.contains_key(*k)).cloned().collect();
    let only_sem: Vec<String> = sem.keys().filter(|k| !tech.contains_key(*k)).cloned().collect();
    if !only_tech.is_empty() || !only_sem.is_empty() {
        return Err(QualityError::KeyMismatch { only_tech, only_sem });
    }
    Ok(tech
        .iter()
        .map(|(id, &t)| {
            let s = sem[id];
            QualityResult {
                video_id: id.clone(),
                remapped_tech: t,
                remapped_sem: s,
                fused: (t + s) / 2.0,
            }
        })
        .collect())
}
