//! Classification and regression losses, plain and reweighted.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::BBox;
use crate::par::prelude::*;

use super::{validate_prob, FocalParams};

/// Positive-valued binary cross-entropy
/// `CE(p, q) = -(q ln p + (1 - q) ln(1 - p))`.
///
/// Assumes `p` is already clamped away from {0, 1}.
#[inline]
pub fn cross_entropy(p: f64, q: f64) -> f64 {
    -(q * p.ln() + (1.0 - q) * (1.0 - p).ln())
}

/// One scored prediction for the varifocal loss: predicted IoU-aware
/// score `p`, target score `q` (IoU for foreground, 0 for background),
/// and whether the query is matched to a ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPred {
    pub p: f64,
    pub q: f64,
    pub positive: bool,
}

/// Varifocal loss:
/// `sum_pos q * CE(p, q) + alpha * sum_neg p^gamma * CE(p, 0)`.
pub fn vfl_loss(preds: &[ScoredPred], params: &FocalParams) -> Result<f64> {
    let terms = vfl_terms(preds, params)?;
    Ok(terms.iter().sum())
}

fn vfl_terms(preds: &[ScoredPred], params: &FocalParams) -> Result<Vec<f64>> {
    preds
        .iter()
        .map(|pred| {
            let p = validate_prob("p", pred.p)?;
            let q = validate_prob("q", pred.q)?;
            Ok(if pred.positive {
                pred.q * cross_entropy(p, q)
            } else {
                params.alpha * p.powf(params.gamma) * cross_entropy(p, 0.0)
            })
        })
        .collect()
}

/// `d vfl / d p` per prediction, holding targets fixed.
pub fn vfl_loss_grad(preds: &[ScoredPred], params: &FocalParams) -> Result<Vec<f64>> {
    preds
        .iter()
        .map(|pred| {
            let p = validate_prob("p", pred.p)?;
            let q = validate_prob("q", pred.q)?;
            Ok(if pred.positive {
                pred.q * (-q / p + (1.0 - q) / (1.0 - p))
            } else {
                let gamma = params.gamma;
                params.alpha
                    * (gamma * p.powf(gamma - 1.0) * (-(1.0 - p).ln()) + p.powf(gamma) / (1.0 - p))
            })
        })
        .collect()
}

/// One positive query for the reweighted classification loss: predicted
/// score `s`, target confidence `t`, and discounted weight `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveSample {
    pub s: f64,
    pub t: f64,
    pub r: f64,
}

/// Reweighted classification loss:
/// `sum_pos r * CE(s, t) + alpha * sum_neg s^gamma * CE(s, 0)`.
///
/// With `r = q` and `t = q` this reproduces [`vfl_loss`] bit for bit.
pub fn reweighted_cls_loss(
    positives: &[PositiveSample],
    negatives: &[f64],
    params: &FocalParams,
) -> Result<f64> {
    let mut acc = 0.0;
    for pos in positives {
        let s = validate_prob("s", pos.s)?;
        let t = validate_prob("t", pos.t)?;
        acc += pos.r * cross_entropy(s, t);
    }
    for &sn in negatives {
        let s = validate_prob("s", sn)?;
        acc += params.alpha * s.powf(params.gamma) * cross_entropy(s, 0.0);
    }
    Ok(acc)
}

/// `d loss / d s` for every positive and negative, holding `t` and `r`
/// fixed.
pub fn reweighted_cls_loss_grad(
    positives: &[PositiveSample],
    negatives: &[f64],
    params: &FocalParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pos: Result<Vec<f64>> = positives
        .iter()
        .map(|pos| {
            let s = validate_prob("s", pos.s)?;
            let t = validate_prob("t", pos.t)?;
            Ok(pos.r * (-t / s + (1.0 - t) / (1.0 - s)))
        })
        .collect();
    let neg: Result<Vec<f64>> = negatives
        .iter()
        .map(|&sn| {
            let s = validate_prob("s", sn)?;
            let gamma = params.gamma;
            Ok(params.alpha
                * (gamma * s.powf(gamma - 1.0) * (-(1.0 - s).ln()) + s.powf(gamma) / (1.0 - s)))
        })
        .collect();
    Ok((pos?, neg?))
}

/// One (prediction, ground truth) pair with its regression weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegPair {
    pub pred: BBox,
    pub gt: BBox,
    pub r: f64,
}

/// L1 distance over (center x, center y, w, h).
#[inline]
fn box_l1(pred: &BBox, gt: &BBox) -> f64 {
    let (pcx, pcy) = pred.center();
    let (gcx, gcy) = gt.center();
    (pcx - gcx).abs() + (pcy - gcy).abs() + (pred.w - gt.w).abs() + (pred.h - gt.h).abs()
}

/// Regression loss `sum r * [ L1(pred, gt) + (1 - IoU(pred, gt)) ]`.
pub fn reg_loss(pairs: &[RegPair]) -> f64 {
    let terms: Vec<f64> = pairs
        .par_iter()
        .map(|pair| pair.r * (box_l1(&pair.pred, &pair.gt) + (1.0 - pair.pred.iou(&pair.gt))))
        .collect();
    terms.iter().sum()
}

/// Analytic gradient of [`reg_loss`] w.r.t. each prediction's
/// `(x, y, w, h)`. Subgradients are 0 at L1 kinks and at min/max ties of
/// the intersection rectangle.
pub fn reg_loss_grad(pairs: &[RegPair]) -> Vec<[f64; 4]> {
    pairs
        .iter()
        .map(|pair| {
            let p = &pair.pred;
            let g = &pair.gt;

            let sgn = |v: f64| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            };

            // L1 over centers and extents.
            let (pcx, pcy) = p.center();
            let (gcx, gcy) = g.center();
            let sx = sgn(pcx - gcx);
            let sy = sgn(pcy - gcy);
            let sw = sgn(p.w - g.w);
            let sh = sgn(p.h - g.h);
            let mut grad = [sx, sy, 0.5 * sx + sw, 0.5 * sy + sh];

            // IoU term: d(1 - I/U)/d theta = -(I' U - I U') / U^2.
            let ix = p.right().min(g.right()) - p.x.max(g.x);
            let iy = p.bottom().min(g.bottom()) - p.y.max(g.y);
            if ix > 0.0 && iy > 0.0 {
                let inter = ix * iy;
                let union = p.area() + g.area() - inter;
                let right_active = if p.right() < g.right() { 1.0 } else { 0.0 };
                let left_active = if p.x > g.x { 1.0 } else { 0.0 };
                let bottom_active = if p.bottom() < g.bottom() { 1.0 } else { 0.0 };
                let top_active = if p.y > g.y { 1.0 } else { 0.0 };

                let dix = [right_active - left_active, 0.0, right_active, 0.0];
                let diy = [0.0, bottom_active - top_active, 0.0, bottom_active];
                let darea = [0.0, 0.0, p.h, p.w];
                for (i, gslot) in grad.iter_mut().enumerate() {
                    let dinter = dix[i] * iy + ix * diy[i];
                    let dunion = darea[i] - dinter;
                    let diou = (dinter * union - inter * dunion) / (union * union);
                    *gslot -= diou;
                }
            }

            [
                pair.r * grad[0],
                pair.r * grad[1],
                pair.r * grad[2],
                pair.r * grad[3],
            ]
        })
        .collect()
}

/// Unweighted total `L = cls + reg + offset + atten`.
pub fn total_loss(cls: f64, reg: f64, offset: f64, atten: f64) -> f64 {
    cls + reg + offset + atten
}
