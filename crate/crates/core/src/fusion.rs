//! Language-guided enhancement of video embeddings.
//!
//! The generated descriptions of a video are embedded, optionally filtered
//! down to the `k` most video-like ones, averaged into a single direction
//! `d`, and fused as `normalize(beta1 * v + beta2 * d)` where `beta2` is the
//! (clamped) cosine between `v` and `d`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::{cosine, normalize, renorm_mean, weighted_sum_normalized, EmbeddingVector, VectorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FusionError {
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("no descriptions to filter")]
    NoDescriptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beta2Mode {
    /// Cosine between the video and its description embedding.
    Cosine,
    Fixed(f64),
}

/// How several kept descriptions enter the fused vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average the descriptions first, then apply one `beta2`.
    #[default]
    Mean,
    /// One `beta2` per description, weighted terms summed.
    PerDescription,
}

fn default_beta1() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_filter_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "FusionConfig::default_beta2")]
    pub beta2_mode: Beta2Mode,
    #[serde(default = "default_true")]
    pub clamp_negative: bool,
    #[serde(default = "default_filter_k")]
    pub filter_k: usize,
    #[serde(default = "default_true")]
    pub filtering_enabled: bool,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            beta1: default_beta1(),
            beta2_mode: Beta2Mode::Cosine,
            clamp_negative: true,
            filter_k: default_filter_k(),
            filtering_enabled: true,
            aggregation: Aggregation::Mean,
        }
    }
}

impl FusionConfig {
    fn default_beta2() -> Beta2Mode {
        Beta2Mode::Cosine
    }

    /// Retrieval and temporal evaluation fuse every description unfiltered.
    pub fn unfiltered() -> Self {
        Self {
            filtering_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.beta1 >= 0.0 && self.beta1.is_finite()) {
            return Err(FusionError::InvalidConfig(format!("beta1 must be >= 0, got {}", self.beta1)));
        }
        if let Beta2Mode::Fixed(b) = self.beta2_mode {
            if !(0.0..=1.0).contains(&b) {
                return Err(FusionError::InvalidConfig(format!("fixed beta2 must lie in [0, 1], got {b}")));
            }
        }
        if self.filter_k == 0 {
            return Err(FusionError::InvalidConfig("filter_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedVisual {
    pub video_id: String,
    pub vector: EmbeddingVector,
    pub beta2_used: f64,
    pub descriptions_kept: Vec<usize>,
}

/// Indices of the `k` descriptions most similar to the video, ascending.
/// Ties go to the lower index.
pub fn filter_descriptions<V: AsRef<[f32]>>(
    video: &EmbeddingVector,
    descriptions: &[V],
    k: usize,
) -> Result<Vec<usize>, FusionError> {
    if descriptions.is_empty() {
        return Err(FusionError::NoDescriptions);
    }
    let scores = descriptions
        .iter()
        .map(|d| crate::vector::cosine_slices(video.as_slice(), d.as_ref()))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps lower indices first among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

pub fn beta2(video: &EmbeddingVector, description: &EmbeddingVector, config: &FusionConfig) -> Result<f64, FusionError> {
    match config.beta2_mode {
        Beta2Mode::Fixed(b) => {
            if video.dim() != description.dim() {
                return Err(VectorError::DimMismatch {
                    left: video.dim(),
                    right: description.dim(),
                }
                .into());
            }
            Ok(b)
        }
        Beta2Mode::Cosine => {
            let c = cosine(video, description)?;
            Ok(if config.clamp_negative { c.max(0.0) } else { c })
        }
    }
}

/// Fuses `video` with already-filtered description embeddings.
pub fn enhance_visual(
    video_id: &str,
    video: &EmbeddingVector,
    descriptions: &[EmbeddingVector],
    kept: Vec<usize>,
    config: &FusionConfig,
) -> Result<EnhancedVisual, FusionError> {
    config.validate()?;
    let v = normalize(video)?;
    if descriptions.is_empty() {
        return Ok(EnhancedVisual {
            video_id: video_id.to_string(),
            vector: v,
            beta2_used: 0.0,
            descriptions_kept: kept,
        });
    }
    let descs = descriptions.iter().map(normalize).collect::<Result<Vec<_>, _>>()?;
    let (vector, beta2_used) = match config.aggregation {
        Aggregation::Mean => {
            let d = renorm_mean(&descs)?;
            let b2 = beta2(&v, &d, config)?;
            let fused = weighted_sum_normalized([(config.beta1, v.as_slice()), (b2, d.as_slice())])?;
            (fused, b2)
        }
        Aggregation::PerDescription => {
            let weights = descs
                .iter()
                .map(|d| beta2(&v, d, config))
                .collect::<Result<Vec<_>, _>>()?;
            let terms = std::iter::once((config.beta1, v.as_slice()))
                .chain(weights.iter().zip(&descs).map(|(&w, d)| (w, d.as_slice())));
            let fused = weighted_sum_normalized(terms)?;
            (fused, weights.iter().sum::<f64>() / weights.len() as f64)
        }
    };
    Ok(EnhancedVisual {
        video_id: video_id.to_string(),
        vector,
        beta2_used,
        descriptions_kept: kept,
    })
}

/// Filtering (when enabled) followed by [`enhance_visual`].
pub fn fuse_video(
    video_id: &str,
    video: &EmbeddingVector,
    descriptions: &[EmbeddingVector],
    config: &FusionConfig,
) -> Result<EnhancedVisual, FusionError> {
    let kept: Vec<usize> = if config.filtering_enabled && !descriptions.is_empty() {
        filter_descriptions(&normalize(video)?, descriptions, config.filter_k)?
    } else {
        (0..descriptions.len()).collect()
    };
    let selected: Vec<EmbeddingVector> = kept.iter().map(|&i| descriptions[i].clone()).collect();
    enhance_visual(video_id, video, &selected, kept, config)
}
