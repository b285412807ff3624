//! Toy multi-scale deformable attention and its sampling-point losses.
//!
//! A query owns a normalized reference point that is mapped into each
//! pyramid level, displaced by learned per-(head, level, point) offsets,
//! and used to bilinearly sample features. Attention weights are
//! softmax-normalized over the (level, point) axes per head.
//!
//! Coordinate conventions, fixed once for the whole crate:
//! * `ref_to_level` maps a normalized point to `(px * W_l, py * H_l)` in
//!   level-pixel coordinates; offsets are expressed and added in that
//!   frame.
//! * Grid cell `(ix, iy)` of a feature level is centered at
//!   `(ix + 0.5, iy + 0.5)`; samples beyond the grid read zeros.
//! * Mapping a level-frame location back to image pixels multiplies by
//!   `(W_img / W_l, H_img / H_l)`.

mod attention;
mod refine;

pub use attention::{attention_forward, bilinear_sample, ref_to_level};
pub use refine::{
    attention_loss, attention_loss_grad, offset_loss, offset_loss_grad, partition_points,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{softmax, DenseMap};

/// Width/height of one pyramid level, in level pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelGeom {
    pub width: usize,
    pub height: usize,
}

/// Image extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

/// One level of a feature pyramid: an `height x width` grid of
/// `channels`-dimensional features, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl FeatureLevel {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::DimensionMismatch(format!(
                "feature level must be at least 2x2, got {height}x{width}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "feature level {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    #[inline]
    pub fn feature(&self, y: usize, x: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn geometry(&self) -> LevelGeom {
        LevelGeom {
            width: self.width,
            height: self.height,
        }
    }
}

/// Multi-scale stack of feature levels sharing one channel depth.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<FeatureLevel>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureLevel>) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| Error::DimensionMismatch("pyramid needs at least one level".into()))?;
        let channels = first.channels;
        if levels.iter().any(|l| l.channels != channels) {
            return Err(Error::DimensionMismatch(
                "all pyramid levels must share the channel depth".into(),
            ));
        }
        Ok(Self { levels })
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels
    }

    pub fn geometry(&self) -> Vec<LevelGeom> {
        self.levels.iter().map(|l| l.geometry()).collect()
    }
}

/// Head/level/point counts plus the per-decoder-layer box expansion
/// schedule used by the offset loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub num_heads: usize,
    pub num_levels: usize,
    pub num_points: usize,
    pub eta_schedule: Vec<f64>,
}

impl SamplingConfig {
    pub const NUM_DECODER_LAYERS: usize = 6;

    pub fn new(
        num_heads: usize,
        num_levels: usize,
        num_points: usize,
        eta_schedule: Vec<f64>,
    ) -> Result<Self> {
        if num_heads < 1 || num_levels < 1 || num_points < 1 {
            return Err(Error::DimensionMismatch(
                "num_heads, num_levels, num_points must all be >= 1".into(),
            ));
        }
        Self::validate_schedule(&eta_schedule)?;
        Ok(Self {
            num_heads,
            num_levels,
            num_points,
            eta_schedule,
        })
    }

    pub fn validate_schedule(schedule: &[f64]) -> Result<()> {
        if schedule.len() != Self::NUM_DECODER_LAYERS {
            return Err(Error::DimensionMismatch(format!(
                "eta schedule needs {} entries, got {}",
                Self::NUM_DECODER_LAYERS,
                schedule.len()
            )));
        }
        for (i, &eta) in schedule.iter().enumerate() {
            if !(eta >= 1.0) {
                return Err(Error::out_of_domain("eta", ">= 1", eta));
            }
            if i > 0 && eta > schedule[i - 1] {
                return Err(Error::DimensionMismatch(
                    "eta schedule must be non-increasing".into(),
                ));
            }
        }
        if *schedule.last().unwrap() != 1.0 {
            return Err(Error::out_of_domain(
                "eta schedule tail",
                "== 1",
                *schedule.last().unwrap(),
            ));
        }
        Ok(())
    }

    /// The ablation optimum: (1.5, 1.3, 1.2, 1.1, 1.05, 1.0).
    pub fn default_eta_schedule() -> Vec<f64> {
        vec![1.5, 1.3, 1.2, 1.1, 1.05, 1.0]
    }
}

/// Per-query sampling state: offsets, attention weights, and the
/// inside/outside partition, all indexed by `(head, level, point)`.
///
/// Weights satisfy `sum over (level, point) of A[m, l, k] = 1` per head.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingState {
    pub num_heads: usize,
    pub num_levels: usize,
    pub num_points: usize,
    /// Offsets in level-pixel units, applied after `ref_to_level`.
    pub offsets: Vec<[f64; 2]>,
    /// Softmax-normalized attention weights.
    pub weights: Vec<f64>,
    /// `true` where the absolute sample location lies in the query's
    /// previous-layer box; filled by [`partition_points`].
    pub inside_mask: Vec<bool>,
}

impl SamplingState {
    /// Builds a state from raw attention logits, normalizing per head
    /// over the (level, point) axes.
    pub fn from_logits(
        num_heads: usize,
        num_levels: usize,
        num_points: usize,
        offsets: Vec<[f64; 2]>,
        logits: &[f64],
    ) -> Result<Self> {
        let n = num_heads * num_levels * num_points;
        if offsets.len() != n || logits.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} offsets/logits for {num_heads}x{num_levels}x{num_points}, got {}/{}",
                offsets.len(),
                logits.len()
            )));
        }
        let per_head = num_levels * num_points;
        let mut weights = vec![0.0; n];
        for m in 0..num_heads {
            let head = softmax(&logits[m * per_head..(m + 1) * per_head]);
            weights[m * per_head..(m + 1) * per_head].copy_from_slice(&head);
        }
        Ok(Self {
            num_heads,
            num_levels,
            num_points,
            offsets,
            weights,
            inside_mask: vec![false; n],
        })
    }

    #[inline]
    pub fn idx(&self, head: usize, level: usize, point: usize) -> usize {
        (head * self.num_levels + level) * self.num_points + point
    }

    #[inline]
    pub fn offset(&self, head: usize, level: usize, point: usize) -> [f64; 2] {
        self.offsets[self.idx(head, level, point)]
    }

    #[inline]
    pub fn weight(&self, head: usize, level: usize, point: usize) -> f64 {
        self.weights[self.idx(head, level, point)]
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Per-head sums of the attention weights; each should be 1.
    pub fn head_weight_sums(&self) -> Vec<f64> {
        (0..self.num_heads)
            .map(|m| {
                let per_head = self.num_levels * self.num_points;
                self.weights[m * per_head..(m + 1) * per_head].iter().sum()
            })
            .collect()
    }
}

/// Per-head projection matrices of the attention forward pass:
/// `w_val[m]` maps sampled features (C) into the head subspace (C/M),
/// `w_out[m]` maps the aggregated head vector back to C.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub num_heads: usize,
    pub channels: usize,
    pub w_out: Vec<DenseMap>,
    pub w_val: Vec<DenseMap>,
}

impl AttentionParams {
    pub fn new(num_heads: usize, channels: usize, w_out: Vec<DenseMap>, w_val: Vec<DenseMap>) -> Result<Self> {
        if num_heads == 0 || !channels.is_multiple_of(num_heads) {
            return Err(Error::DimensionMismatch(format!(
                "num_heads ({num_heads}) must divide channels ({channels})"
            )));
        }
        let head_dim = channels / num_heads;
        if w_out.len() != num_heads || w_val.len() != num_heads {
            return Err(Error::DimensionMismatch(
                "need one w_out and one w_val per head".into(),
            ));
        }
        for m in 0..num_heads {
            if w_out[m].rows != channels || w_out[m].cols != head_dim {
                return Err(Error::DimensionMismatch(format!(
                    "w_out[{m}] must be {channels}x{head_dim}"
                )));
            }
            if w_val[m].rows != head_dim || w_val[m].cols != channels {
                return Err(Error::DimensionMismatch(format!(
                    "w_val[{m}] must be {head_dim}x{channels}"
                )));
            }
        }
        Ok(Self {
            num_heads,
            channels,
            w_out,
            w_val,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.num_heads
    }
}
