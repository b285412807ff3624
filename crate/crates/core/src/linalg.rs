//! Minimal dense linear maps.
//!
//! Every "convolution" in this crate acts on per-query feature vectors, so
//! 1x1 kernels reduce to dense matrix-vector products. The maps here are
//! tiny (C <= 16 in practice); a hand-rolled row-major struct keeps the
//! forward and backward passes transparent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense linear map `y = W x` with `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMap {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl DenseMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
        }
    }

    pub fn from_weights(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "dense map {rows}x{cols} needs {} weights, got {}",
                rows * cols,
                weights.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            weights,
        })
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.weights
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Backward pass: given `dL/dy`, returns `dL/dx` and accumulates
    /// `dL/dW += dy * x^T` into `grad_w`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad_w: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(grad_w.len(), self.weights.len());
        let mut dx = vec![0.0; self.cols];
        for r in 0..self.rows {
            let g = dy[r];
            for c in 0..self.cols {
                grad_w[r * self.cols + c] += g * x[c];
                dx[c] += g * self.weights[r * self.cols + c];
            }
        }
        dx
    }
}

/// Numerically stable softmax over a slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Backward through softmax: given probabilities `p` and upstream `dL/dp`,
/// returns `dL/dz` where `p = softmax(z)`.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    debug_assert_eq!(probs.len(), dprobs.len());
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, d)| p * d).sum();
    probs
        .iter()
        .zip(dprobs)
        .map(|(&p, &d)| p * (d - dot))
        .collect()
}
