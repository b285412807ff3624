//! Varifocal classification loss, box regression loss, and the
//! task-decoupled reweighting of positive samples.
//!
//! A small generator network scores each positive query's difficulty from
//! the classification/regression head hidden features, and the resulting
//! weight is discounted by the gap between target and predicted
//! confidence, `r = w^(1 - |t - s|)`, before it replaces the positive-term
//! factor in the varifocal loss.

mod generator;
mod losses;

pub use generator::{BatchNorm, WeightGenerator, WeightGeneratorGrads, WeightGeneratorParams};
pub use losses::{
    cross_entropy, reg_loss, reg_loss_grad, reweighted_cls_loss, reweighted_cls_loss_grad,
    total_loss, vfl_loss, vfl_loss_grad, PositiveSample, RegPair, ScoredPred,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub(crate) fn validate_prob(name: &'static str, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::out_of_domain(name, "in [0, 1]", p));
    }
    Ok(clamp_prob(p))
}

/// Varifocal trade-off parameters; defaults are the ablation optima
/// `alpha = 0.5`, `gamma = 1.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::out_of_domain("alpha", "> 0", alpha));
        }
        if !(gamma > 0.0) {
            return Err(Error::out_of_domain("gamma", "> 0", gamma));
        }
        Ok(Self { alpha, gamma })
    }
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 1.5,
        }
    }
}

/// Hidden features of one query from the classification and regression
/// heads; equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHiddenPair {
    pub h_cls: Vec<f64>,
    pub h_reg: Vec<f64>,
}

impl QueryHiddenPair {
    pub fn new(h_cls: Vec<f64>, h_reg: Vec<f64>) -> Result<Self> {
        if h_cls.len() != h_reg.len() {
            return Err(Error::DimensionMismatch(format!(
                "hidden pair widths differ: cls {} vs reg {}",
                h_cls.len(),
                h_reg.len()
            )));
        }
        Ok(Self { h_cls, h_reg })
    }

    pub fn width(&self) -> usize {
        self.h_cls.len()
    }
}

/// Confidence-gap discount `r = w^(1 - |t - s|)`.
///
/// Equals `w` when the prediction hits the target and relaxes to 1 as the
/// gap opens; always `>= w` and non-decreasing in the gap.
pub fn discount(w: f64, t: f64, s: f64) -> Result<f64> {
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::out_of_domain("w", "in (0, 1)", w));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::out_of_domain("t", "in [0, 1]", t));
    }
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::out_of_domain("s", "in [0, 1]", s));
    }
    Ok(w.powf(1.0 - (t - s).abs()))
}

/// `d discount / d w = (1 - |t - s|) * w^(-|t - s|)`.
pub fn discount_grad_w(w: f64, t: f64, s: f64) -> Result<f64> {
    discount(w, t, s)?;
    let gap = (t - s).abs();
    Ok((1.0 - gap) * w.powf(-gap))
}

/// `d discount / d s`, treating `t` as a constant. Subgradient 0 at the
/// `t = s` kink.
pub fn discount_grad_s(w: f64, t: f64, s: f64) -> Result<f64> {
    let r = discount(w, t, s)?;
    let sign = if s > t {
        1.0
    } else if s < t {
        -1.0
    } else {
        return Ok(0.0);
    };
    Ok(-r * w.ln() * sign)
}
