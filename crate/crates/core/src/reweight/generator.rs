//! The per-query weight generator.
//!
//! Structure (1x1 convolutions act on per-query vectors, so every conv is
//! a dense map; `B` is batch-norm followed by ReLU, `sigma` a sigmoid):
//!
//! ```text
//! a      = sigma(B(conv1(cat(h_reg, h_cls))))          shared, width C
//! w_cls  = sigma(B(conv3_cls(h_cls  (*) conv2_cls(a))))  scalar
//! w_reg  = sigma(B(conv3_reg(h_reg  (*) conv2_reg(a))))  scalar
//! ```
//!
//! `(*)` is elementwise multiplication. conv2/conv3 may be shared across
//! the two branches; batch norms are always per-branch. Per-query forward
//! and backward run batch norm in inference mode (running statistics);
//! training mode normalizes over a positive-query batch and updates the
//! running statistics under a single-writer contract.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMap;

use super::QueryHiddenPair;

/// Per-channel batch normalization with learnable scale/shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Retain factor for running statistics: `run = m*run + (1-m)*batch`.
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(width: usize) -> Self {
        Self {
            scale: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn width(&self) -> usize {
        self.scale.len()
    }

    /// Inference mode: normalize with running statistics.
    pub fn inference(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(c, &v)| {
                (v - self.running_mean[c]) / (self.running_var[c] + self.eps).sqrt()
                    * self.scale[c]
                    + self.shift[c]
            })
            .collect()
    }

    /// Training mode: normalize a batch with its own statistics and fold
    /// them into the running estimates. Callers must serialize access.
    pub fn train_batch(&mut self, batch: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert!(!batch.is_empty(), "batch norm needs at least one sample");
        let width = self.width();
        let n = batch.len() as f64;
        let mut mean = vec![0.0; width];
        for x in batch {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; width];
        for x in batch {
            for c in 0..width {
                let d = x[c] - mean[c];
                var[c] += d * d / n;
            }
        }
        for c in 0..width {
            self.running_mean[c] =
                self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean[c];
            self.running_var[c] =
                self.momentum * self.running_var[c] + (1.0 - self.momentum) * var[c];
        }
        batch
            .iter()
            .map(|x| {
                (0..width)
                    .map(|c| {
                        (x[c] - mean[c]) / (var[c] + self.eps).sqrt() * self.scale[c]
                            + self.shift[c]
                    })
                    .collect()
            })
            .collect()
    }
}

/// All parameters of the generator. `conv2_reg`/`conv3_reg` of `None`
/// share the classification branch's maps.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGeneratorParams {
    pub channels: usize,
    pub conv1: DenseMap,
    pub bn1: BatchNorm,
    pub conv2_cls: DenseMap,
    pub conv3_cls: DenseMap,
    pub conv2_reg: Option<DenseMap>,
    pub conv3_reg: Option<DenseMap>,
    pub bn3_cls: BatchNorm,
    pub bn3_reg: BatchNorm,
}

impl WeightGeneratorParams {
    /// All-zero convolution weights with identity batch norms; mostly a
    /// test fixture (every input then maps to w = sigma(0) = 0.5).
    pub fn zeros(channels: usize, share_branch_convs: bool) -> Self {
        let branch = if share_branch_convs {
            (None, None)
        } else {
            (
                Some(DenseMap::zeros(channels, channels)),
                Some(DenseMap::zeros(1, channels)),
            )
        };
        Self {
            channels,
            conv1: DenseMap::zeros(channels, 2 * channels),
            bn1: BatchNorm::identity(channels),
            conv2_cls: DenseMap::zeros(channels, channels),
            conv3_cls: DenseMap::zeros(1, channels),
            conv2_reg: branch.0,
            conv3_reg: branch.1,
            bn3_cls: BatchNorm::identity(1),
            bn3_reg: BatchNorm::identity(1),
        }
    }

    /// Centered-uniform initialization scaled by `1/sqrt(fan_in)`; batch
    /// norm scale 1, shift 0, running stats (0, 1).
    pub fn init<R: Rng>(channels: usize, share_branch_convs: bool, rng: &mut R) -> Self {
        let mut params = Self::zeros(channels, share_branch_convs);
        let fill = |map: &mut DenseMap, rng: &mut R| {
            let bound = 1.0 / (map.cols as f64).sqrt();
            for w in map.weights.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
        };
        fill(&mut params.conv1, rng);
        fill(&mut params.conv2_cls, rng);
        fill(&mut params.conv3_cls, rng);
        if let Some(ref mut m) = params.conv2_reg {
            fill(m, rng);
        }
        if let Some(ref mut m) = params.conv3_reg {
            fill(m, rng);
        }
        params
    }

    pub fn shares_branch_convs(&self) -> bool {
        self.conv2_reg.is_none()
    }

    fn conv2_reg(&self) -> &DenseMap {
        self.conv2_reg.as_ref().unwrap_or(&self.conv2_cls)
    }

    fn conv3_reg(&self) -> &DenseMap {
        self.conv3_reg.as_ref().unwrap_or(&self.conv3_cls)
    }

    /// Flattens every trainable parameter (conv weights, bn scale/shift)
    /// into one vector; shared branch maps appear once.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.conv1.weights);
        out.extend_from_slice(&self.bn1.scale);
        out.extend_from_slice(&self.bn1.shift);
        out.extend_from_slice(&self.conv2_cls.weights);
        out.extend_from_slice(&self.conv3_cls.weights);
        if let Some(ref m) = self.conv2_reg {
            out.extend_from_slice(&m.weights);
        }
        if let Some(ref m) = self.conv3_reg {
            out.extend_from_slice(&m.weights);
        }
        out.extend_from_slice(&self.bn3_cls.scale);
        out.extend_from_slice(&self.bn3_cls.shift);
        out.extend_from_slice(&self.bn3_reg.scale);
        out.extend_from_slice(&self.bn3_reg.shift);
        out
    }

    /// Inverse of [`Self::to_flat`]; running statistics are untouched.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.to_flat().len();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "flat parameter vector needs {expected} entries, got {}",
                flat.len()
            )));
        }
        let mut at = 0usize;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        take(&mut self.conv1.weights);
        take(&mut self.bn1.scale);
        take(&mut self.bn1.shift);
        take(&mut self.conv2_cls.weights);
        take(&mut self.conv3_cls.weights);
        if let Some(ref mut m) = self.conv2_reg {
            take(&mut m.weights);
        }
        if let Some(ref mut m) = self.conv3_reg {
            take(&mut m.weights);
        }
        take(&mut self.bn3_cls.scale);
        take(&mut self.bn3_cls.shift);
        take(&mut self.bn3_reg.scale);
        take(&mut self.bn3_reg.shift);
        Ok(())
    }
}

/// Gradients in the same flat layout as
/// [`WeightGeneratorParams::to_flat`].
#[derive(Debug, Clone)]
pub struct WeightGeneratorGrads {
    pub flat: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

struct BranchTrace {
    conv2_in: Vec<f64>,  // a
    conv2_out: Vec<f64>, // u
    gated: Vec<f64>,     // h (*) u
    z3: f64,
    b3: f64,
    w: f64,
}

struct Trace {
    input: Vec<f64>, // cat(h_reg, h_cls)
    z1: Vec<f64>,
    b1: Vec<f64>,
    a: Vec<f64>, // sigmoid(relu(b1))
    cls: BranchTrace,
    reg: BranchTrace,
}

/// Forward/backward driver around [`WeightGeneratorParams`].
pub struct WeightGenerator;

impl WeightGenerator {
    /// Per-query forward in inference mode; returns `(w_cls, w_reg)`,
    /// both strictly inside (0, 1).
    pub fn forward(params: &WeightGeneratorParams, pair: &QueryHiddenPair) -> Result<(f64, f64)> {
        let trace = Self::trace(params, pair)?;
        Ok((trace.cls.w, trace.reg.w))
    }

    fn trace(params: &WeightGeneratorParams, pair: &QueryHiddenPair) -> Result<Trace> {
        let c = params.channels;
        if pair.width() != c {
            return Err(Error::DimensionMismatch(format!(
                "hidden pair width {} does not match generator channels {c}",
                pair.width()
            )));
        }
        let mut input = Vec::with_capacity(2 * c);
        input.extend_from_slice(&pair.h_reg);
        input.extend_from_slice(&pair.h_cls);

        let z1 = params.conv1.apply(&input);
        let b1 = params.bn1.inference(&z1);
        let a1: Vec<f64> = b1.iter().map(|&v| relu(v)).collect();
        let a: Vec<f64> = a1.iter().map(|&v| sigmoid(v)).collect();

        let branch = |conv2: &DenseMap, conv3: &DenseMap, bn3: &BatchNorm, h: &[f64]| {
            let u = conv2.apply(&a);
            let gated: Vec<f64> = h.iter().zip(&u).map(|(&hv, &uv)| hv * uv).collect();
            let z3 = conv3.apply(&gated)[0];
            let b3 = bn3.inference(&[z3])[0];
            let r3 = relu(b3);
            BranchTrace {
                conv2_in: a.clone(),
                conv2_out: u,
                gated,
                z3,
                b3,
                w: sigmoid(r3),
            }
        };
        let cls = branch(&params.conv2_cls, &params.conv3_cls, &params.bn3_cls, &pair.h_cls);
        let reg = branch(params.conv2_reg(), params.conv3_reg(), &params.bn3_reg, &pair.h_reg);

        Ok(Trace {
            input,
            z1,
            b1,
            a,
            cls,
            reg,
        })
    }

    /// Backward pass in inference mode: given upstream `dL/dw_cls` and
    /// `dL/dw_reg`, returns parameter gradients in flat layout plus the
    /// input gradients `(dL/dh_cls, dL/dh_reg)`.
    pub fn backward(
        params: &WeightGeneratorParams,
        pair: &QueryHiddenPair,
        d_w_cls: f64,
        d_w_reg: f64,
    ) -> Result<(WeightGeneratorGrads, Vec<f64>, Vec<f64>)> {
        let c = params.channels;
        let trace = Self::trace(params, pair)?;

        let mut g_conv1 = vec![0.0; params.conv1.weights.len()];
        let mut g_bn1_scale = vec![0.0; c];
        let mut g_bn1_shift = vec![0.0; c];
        let mut g_conv2_cls = vec![0.0; params.conv2_cls.weights.len()];
        let mut g_conv3_cls = vec![0.0; params.conv3_cls.weights.len()];
        let mut g_conv2_reg = vec![0.0; params.conv2_reg().weights.len()];
        let mut g_conv3_reg = vec![0.0; params.conv3_reg().weights.len()];
        let mut g_bn3_cls = [0.0; 2]; // scale, shift
        let mut g_bn3_reg = [0.0; 2];
        let mut d_h_cls = vec![0.0; c];
        let mut d_h_reg = vec![0.0; c];
        let mut d_a = vec![0.0; c];

        let mut run_branch = |bt: &BranchTrace,
                              conv2: &DenseMap,
                              conv3: &DenseMap,
                              bn3: &BatchNorm,
                              h: &[f64],
                              d_w: f64,
                              g_conv2: &mut [f64],
                              g_conv3: &mut [f64],
                              g_bn3: &mut [f64; 2],
                              d_h: &mut [f64]| {
            let d_r3 = d_w * bt.w * (1.0 - bt.w);
            let d_b3 = if bt.b3 > 0.0 { d_r3 } else { 0.0 };
            let inv_std = 1.0 / (bn3.running_var[0] + bn3.eps).sqrt();
            g_bn3[0] += d_b3 * (bt.z3 - bn3.running_mean[0]) * inv_std;
            g_bn3[1] += d_b3;
            let d_z3 = d_b3 * bn3.scale[0] * inv_std;
            let d_gated = conv3.backward(&bt.gated, &[d_z3], g_conv3);
            for i in 0..c {
                d_h[i] += d_gated[i] * bt.conv2_out[i];
            }
            let d_u: Vec<f64> = d_gated.iter().zip(h).map(|(&dg, &hv)| dg * hv).collect();
            let d_a_branch = conv2.backward(&bt.conv2_in, &d_u, g_conv2);
            for i in 0..c {
                d_a[i] += d_a_branch[i];
            }
        };

        run_branch(
            &trace.cls,
            &params.conv2_cls,
            &params.conv3_cls,
            &params.bn3_cls,
            &pair.h_cls,
            d_w_cls,
            &mut g_conv2_cls,
            &mut g_conv3_cls,
            &mut g_bn3_cls,
            &mut d_h_cls,
        );
        run_branch(
            &trace.reg,
            params.conv2_reg(),
            params.conv3_reg(),
            &params.bn3_reg,
            &pair.h_reg,
            d_w_reg,
            &mut g_conv2_reg,
            &mut g_conv3_reg,
            &mut g_bn3_reg,
            &mut d_h_reg,
        );

        // Shared attention feature: a = sigmoid(relu(bn1(conv1 x))).
        let d_a1: Vec<f64> = d_a
            .iter()
            .zip(&trace.a)
            .map(|(&d, &av)| d * av * (1.0 - av))
            .collect();
        let d_b1: Vec<f64> = d_a1
            .iter()
            .zip(&trace.b1)
            .map(|(&d, &bv)| if bv > 0.0 { d } else { 0.0 })
            .collect();
        let mut d_z1 = vec![0.0; c];
        for ch in 0..c {
            let inv_std = 1.0 / (params.bn1.running_var[ch] + params.bn1.eps).sqrt();
            g_bn1_scale[ch] = d_b1[ch] * (trace.z1[ch] - params.bn1.running_mean[ch]) * inv_std;
            g_bn1_shift[ch] = d_b1[ch];
            d_z1[ch] = d_b1[ch] * params.bn1.scale[ch] * inv_std;
        }
        let d_input = params.conv1.backward(&trace.input, &d_z1, &mut g_conv1);
        for i in 0..c {
            d_h_reg[i] += d_input[i];
            d_h_cls[i] += d_input[c + i];
        }

        // Assemble in the to_flat layout; shared branch maps accumulate
        // both branch contributions in the cls slot.
        let mut flat = Vec::new();
        flat.extend_from_slice(&g_conv1);
        flat.extend_from_slice(&g_bn1_scale);
        flat.extend_from_slice(&g_bn1_shift);
        if params.shares_branch_convs() {
            let merged2: Vec<f64> = g_conv2_cls
                .iter()
                .zip(&g_conv2_reg)
                .map(|(a, b)| a + b)
                .collect();
            let merged3: Vec<f64> = g_conv3_cls
                .iter()
                .zip(&g_conv3_reg)
                .map(|(a, b)| a + b)
                .collect();
            flat.extend_from_slice(&merged2);
            flat.extend_from_slice(&merged3);
        } else {
            flat.extend_from_slice(&g_conv2_cls);
            flat.extend_from_slice(&g_conv3_cls);
            flat.extend_from_slice(&g_conv2_reg);
            flat.extend_from_slice(&g_conv3_reg);
        }
        flat.extend_from_slice(&g_bn3_cls);
        flat.extend_from_slice(&g_bn3_reg);

        Ok((WeightGeneratorGrads { flat }, d_h_cls, d_h_reg))
    }
}
