//! The registered gradient checks for every analytic gradient shipped by
//! the crate.
//!
//! Each case owns the scalar function, its analytic gradient, and a
//! kink-avoiding sampler. Samplers resample until every non-smooth set
//! (L1 corners, hinge boundaries, ReLU pre-activations, partition
//! boundaries) is farther away than a margin comfortably above the finite
//! -difference step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deform::{
    attention_loss, attention_loss_grad, offset_loss, offset_loss_grad, partition_points,
    ImageSize, LevelGeom, SamplingState,
};
use crate::geometry::{BBox, NormalizedPoint};
use crate::reweight::{
    discount, discount_grad_s, discount_grad_w, reg_loss, reg_loss_grad, reweighted_cls_loss,
    reweighted_cls_loss_grad, vfl_loss, vfl_loss_grad, FocalParams, PositiveSample,
    QueryHiddenPair, RegPair, ScoredPred, WeightGenerator, WeightGeneratorParams,
};
use crate::scale_target::{confidence, confidence_grad, ScaleTargetParams};

use super::{check, CheckReport, FdSpec};

pub type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Sync>;
pub type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Sync>;
pub type SamplerFn = Box<dyn FnMut() -> Vec<f64> + Send>;

/// One registered gradient check.
pub struct Case {
    pub name: &'static str,
    pub samples: usize,
    pub f: ScalarFn,
    pub grad: GradFn,
    pub sampler: SamplerFn,
    /// Multiplier applied to the analytic gradient; 1.0 normally, used by
    /// the fault-injection harness to demonstrate failure reporting.
    pub fault_scale: f64,
}

/// Inputs the standard suite closes over.
#[derive(Debug, Clone, Copy)]
pub struct SuiteParams {
    pub scale_target: ScaleTargetParams,
    pub focal: FocalParams,
    pub strict_min: bool,
    pub share_branch_convs: bool,
    pub seed: u64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            scale_target: ScaleTargetParams::default(),
            focal: FocalParams::default(),
            strict_min: false,
            share_branch_convs: false,
            seed: 0x5eed,
        }
    }
}

const MARGIN: f64 = 1e-3;

fn case_confidence(sp: &SuiteParams) -> Case {
    let params = sp.scale_target;
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x01);
    Case {
        name: "confidence",
        samples: 1000,
        f: Box::new(move |x| confidence(x[0], x[1], &params).unwrap()),
        grad: Box::new(move |x| {
            let (du, drho) = confidence_grad(x[0], x[1], &params).unwrap();
            vec![du, drho]
        }),
        sampler: Box::new(move || {
            vec![
                rng.random_range(0.02..0.98),
                rng.random_range(0.1..6.0),
            ]
        }),
        fault_scale: 1.0,
    }
}

fn case_discount(sp: &SuiteParams) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x02);
    Case {
        name: "discount",
        samples: 1000,
        f: Box::new(|x| discount(x[0], x[1], x[2]).unwrap()),
        grad: Box::new(|x| {
            let (w, t, s) = (x[0], x[1], x[2]);
            let dw = discount_grad_w(w, t, s).unwrap();
            let ds = discount_grad_s(w, t, s).unwrap();
            // d/dt mirrors d/ds with the opposite sign of the gap.
            vec![dw, -ds, ds]
        }),
        sampler: Box::new(move || loop {
            let w = rng.random_range(0.05..0.95);
            let t = rng.random_range(MARGIN..(1.0 - MARGIN));
            let s = rng.random_range(MARGIN..(1.0 - MARGIN));
            // |t - s| = 0 is the kink; |t - s| = 1 is unreachable here.
            if (t - s).abs() > MARGIN {
                return vec![w, t, s];
            }
        }),
        fault_scale: 1.0,
    }
}

fn case_vfl(sp: &SuiteParams) -> Case {
    let focal = sp.focal;
    let mut qrng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x03);
    let targets: Vec<f64> = (0..2).map(|_| qrng.random_range(0.2..0.95)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x04);
    let build = move |x: &[f64]| -> Vec<ScoredPred> {
        vec![
            ScoredPred {
                p: x[0],
                q: targets[0],
                positive: true,
            },
            ScoredPred {
                p: x[1],
                q: targets[1],
                positive: true,
            },
            ScoredPred {
                p: x[2],
                q: 0.0,
                positive: false,
            },
            ScoredPred {
                p: x[3],
                q: 0.0,
                positive: false,
            },
        ]
    };
    let build_f = build.clone();
    Case {
        name: "vfl_loss",
        samples: 1000,
        f: Box::new(move |x| vfl_loss(&build_f(x), &focal).unwrap()),
        grad: Box::new(move |x| vfl_loss_grad(&build(x), &focal).unwrap()),
        sampler: Box::new(move || (0..4).map(|_| rng.random_range(0.02..0.98)).collect()),
        fault_scale: 1.0,
    }
}

fn case_reweighted_cls(sp: &SuiteParams) -> Case {
    let focal = sp.focal;
    let mut frng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x05);
    let ts: Vec<f64> = (0..2).map(|_| frng.random_range(0.3..0.9)).collect();
    let rs: Vec<f64> = (0..2).map(|_| frng.random_range(0.2..0.9)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x06);
    let split = move |x: &[f64]| -> (Vec<PositiveSample>, Vec<f64>) {
        (
            vec![
                PositiveSample {
                    s: x[0],
                    t: ts[0],
                    r: rs[0],
                },
                PositiveSample {
                    s: x[1],
                    t: ts[1],
                    r: rs[1],
                },
            ],
            vec![x[2], x[3]],
        )
    };
    let split_f = split.clone();
    Case {
        name: "reweighted_cls_loss",
        samples: 1000,
        f: Box::new(move |x| {
            let (pos, neg) = split_f(x);
            reweighted_cls_loss(&pos, &neg, &focal).unwrap()
        }),
        grad: Box::new(move |x| {
            let (pos, neg) = split(x);
            let (gp, gn) = reweighted_cls_loss_grad(&pos, &neg, &focal).unwrap();
            gp.into_iter().chain(gn).collect()
        }),
        sampler: Box::new(move || (0..4).map(|_| rng.random_range(0.02..0.98)).collect()),
        fault_scale: 1.0,
    }
}

fn case_reg(sp: &SuiteParams) -> Case {
    let gt = BBox::new(2.0, 3.0, 5.0, 4.0).unwrap();
    let r = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x07);
    let pair = move |x: &[f64]| RegPair {
        pred: BBox::new(x[0], x[1], x[2], x[3]).unwrap(),
        gt,
        r,
    };
    Case {
        name: "reg_loss",
        samples: 1000,
        f: Box::new(move |x| reg_loss(&[pair(x)])),
        grad: Box::new(move |x| reg_loss_grad(&[pair(x)])[0].to_vec()),
        sampler: Box::new(move || loop {
            let x = rng.random_range(0.0..4.5);
            let y = rng.random_range(1.0..5.5);
            let w = rng.random_range(2.0..8.0);
            let h = rng.random_range(2.0..7.0);
            let pred = BBox::new(x, y, w, h).unwrap();
            // Overlap plus clearance from every kink: L1 sign zeros and
            // min/max ties of the intersection rectangle.
            let (pcx, pcy) = pred.center();
            let (gcx, gcy) = gt.center();
            let clear = pred.intersection_area(&gt) > 0.5
                && (pcx - gcx).abs() > MARGIN
                && (pcy - gcy).abs() > MARGIN
                && (pred.w - gt.w).abs() > MARGIN
                && (pred.h - gt.h).abs() > MARGIN
                && (pred.x - gt.x).abs() > MARGIN
                && (pred.y - gt.y).abs() > MARGIN
                && (pred.right() - gt.right()).abs() > MARGIN
                && (pred.bottom() - gt.bottom()).abs() > MARGIN;
            if clear {
                return vec![x, y, w, h];
            }
        }),
        fault_scale: 1.0,
    }
}

/// Fixed geometry shared by the offset-loss check.
struct OffsetFixture {
    levels: Vec<LevelGeom>,
    image: ImageSize,
    prev_box: BBox,
    ref_point: NormalizedPoint,
    eta: f64,
}

impl OffsetFixture {
    fn new() -> Self {
        Self {
            levels: vec![
                LevelGeom {
                    width: 32,
                    height: 32,
                },
                LevelGeom {
                    width: 16,
                    height: 16,
                },
            ],
            image: ImageSize {
                width: 64.0,
                height: 64.0,
            },
            prev_box: BBox::new(24.0, 20.0, 14.0, 18.0).unwrap(),
            ref_point: NormalizedPoint::new(0.48, 0.45).unwrap(),
            eta: 1.3,
        }
    }

    fn state(&self, offsets: &[f64]) -> SamplingState {
        let pts: Vec<[f64; 2]> = offsets.chunks(2).map(|c| [c[0], c[1]]).collect();
        let n = pts.len();
        let mut state = SamplingState {
            num_heads: 1,
            num_levels: 2,
            num_points: n / 2,
            weights: vec![1.0 / n as f64; n],
            inside_mask: vec![false; n],
            offsets: pts,
        };
        partition_points(
            &mut state,
            &self.prev_box,
            self.ref_point,
            &self.levels,
            self.image,
        );
        state
    }
}

fn case_offset(sp: &SuiteParams) -> Case {
    let fx = OffsetFixture::new();
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x08);
    let f_fx = OffsetFixture::new();
    let g_fx = OffsetFixture::new();
    Case {
        name: "offset_loss",
        samples: 1000,
        f: Box::new(move |x| {
            let state = f_fx.state(x);
            offset_loss(
                &[state],
                &[f_fx.prev_box],
                f_fx.eta,
                &f_fx.levels,
                f_fx.image,
            )
        }),
        grad: Box::new(move |x| {
            let state = g_fx.state(x);
            let g = offset_loss_grad(
                &[state],
                &[g_fx.prev_box],
                g_fx.eta,
                &g_fx.levels,
                g_fx.image,
            );
            g[0].iter().flat_map(|p| [p[0], p[1]]).collect()
        }),
        sampler: Box::new(move || loop {
            // 1 head x 2 levels x 2 points = 4 offsets (8 coordinates).
            let x: Vec<f64> = (0..8).map(|_| rng.random_range(-14.0..14.0)).collect();
            if offset_sample_is_clear(&fx, &x) {
                return x;
            }
        }),
        fault_scale: 1.0,
    }
}

/// All kink clearances for an offset-loss sample: sign kinks of the
/// target, L1 corners of the gap, and partition boundaries in image
/// coordinates.
fn offset_sample_is_clear(fx: &OffsetFixture, x: &[f64]) -> bool {
    let state = fx.state(x);
    for l in 0..2usize {
        let geom = fx.levels[l];
        let bx = fx.ref_point.px() * geom.width as f64;
        let by = fx.ref_point.py() * geom.height as f64;
        let sx = fx.image.width / geom.width as f64;
        let sy = fx.image.height / geom.height as f64;
        let wl = fx.eta * fx.prev_box.w * geom.width as f64 / fx.image.width;
        let hl = fx.eta * fx.prev_box.h * geom.height as f64 / fx.image.height;
        for k in 0..2usize {
            let idx = state.idx(0, l, k);
            let [ox, oy] = state.offsets[idx];
            // Sign kinks of the per-axis target.
            if ox.abs() < MARGIN || oy.abs() < MARGIN {
                return false;
            }
            // L1 corners of the squared-L1 gap.
            let tx = ox.signum() * wl;
            let ty = oy.signum() * hl;
            if (ox - tx).abs() < MARGIN || (oy - ty).abs() < MARGIN {
                return false;
            }
            // Partition boundary: image-space distance to every box edge.
            let px = (bx + ox) * sx;
            let py = (by + oy) * sy;
            let b = fx.prev_box;
            let near_edge = (px - b.x).abs() < MARGIN
                || (px - b.right()).abs() < MARGIN
                || (py - b.y).abs() < MARGIN
                || (py - b.bottom()).abs() < MARGIN;
            if near_edge {
                return false;
            }
        }
    }
    true
}

fn case_attention(sp: &SuiteParams) -> Case {
    let strict_min = sp.strict_min;
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x09);
    // 1 head, 2 levels, 3 points; partition fixed per sample via a mask
    // appended to the state built from the weight vector.
    let masks: Vec<Vec<bool>> = vec![
        vec![true, false, false, true, true, false],
        vec![true, true, false, false, false, false],
    ];
    let build = move |weights: &[f64], mask: &[bool]| SamplingState {
        num_heads: 1,
        num_levels: 2,
        num_points: 3,
        offsets: vec![[0.0, 0.0]; 6],
        weights: weights.to_vec(),
        inside_mask: mask.to_vec(),
    };
    let f_masks = masks.clone();
    let g_masks = masks.clone();
    let mut which = 0usize;
    Case {
        name: "attention_loss",
        samples: 1000,
        // The sampler alternates between two partitions and encodes the
        // choice in x[6]; that selector coordinate is locally constant
        // under the FD stencil (step ~1e-5 around 0 or 1).
        f: Box::new(move |x| {
            let m = if x[6] > 0.5 { &f_masks[1] } else { &f_masks[0] };
            attention_loss(&[build(&x[..6], m)], strict_min)
        }),
        grad: Box::new(move |x| {
            let m = if x[6] > 0.5 { &g_masks[1] } else { &g_masks[0] };
            let mut g = attention_loss_grad(&[build(&x[..6], m)], strict_min)[0].clone();
            // The mask selector coordinate is locally constant.
            g.push(0.0);
            g
        }),
        sampler: Box::new(move || loop {
            which = (which + 1) % 2;
            let mask = &masks[which];
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
            if attention_sample_is_clear(&w, mask, strict_min) {
                let mut x = w;
                x.push(which as f64);
                return x;
            }
        }),
        fault_scale: 1.0,
    }
}

/// Clearances for the attention-loss hinge: every outside weight keeps a
/// margin to the group reference and the reference itself is a strict
/// arg-extremum by a margin.
fn attention_sample_is_clear(weights: &[f64], mask: &[bool], strict_min: bool) -> bool {
    for l in 0..2usize {
        let group: Vec<usize> = (0..3).map(|k| l * 3 + k).collect();
        let inside: Vec<usize> = group.iter().copied().filter(|&i| mask[i]).collect();
        let outside: Vec<usize> = group.iter().copied().filter(|&i| !mask[i]).collect();
        let reference = if inside.is_empty() {
            0.0
        } else {
            let vals: Vec<f64> = inside.iter().map(|&i| weights[i]).collect();
            let best = if strict_min {
                vals.iter().cloned().fold(f64::INFINITY, f64::min)
            } else {
                vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            // The extremum must be uniquely attained by a margin.
            if vals.iter().filter(|&&v| (v - best).abs() < MARGIN).count() > 1 {
                return false;
            }
            best
        };
        for &o in &outside {
            if (weights[o] - reference).abs() < MARGIN {
                return false;
            }
        }
    }
    true
}

fn case_weight_generator(sp: &SuiteParams) -> Case {
    let channels = 4usize;
    let mut init_rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x0a);
    let params = WeightGeneratorParams::init(channels, sp.share_branch_convs, &mut init_rng);
    let pair = QueryHiddenPair::new(
        (0..channels)
            .map(|_| init_rng.random_range(-1.5..1.5))
            .collect(),
        (0..channels)
            .map(|_| init_rng.random_range(-1.5..1.5))
            .collect(),
    )
    .unwrap();
    let dim = params.to_flat().len();
    let mut rng = ChaCha8Rng::seed_from_u64(sp.seed ^ 0x0b);

    let f_params = params.clone();
    let f_pair = pair.clone();
    let g_params = params.clone();
    let g_pair = pair.clone();
    let s_params = params.clone();
    let s_pair = pair.clone();
    Case {
        name: "weight_generator",
        samples: 100,
        f: Box::new(move |x| {
            let mut q = f_params.clone();
            q.assign_flat(x).unwrap();
            let (w_cls, w_reg) = WeightGenerator::forward(&q, &f_pair).unwrap();
            w_cls + 2.0 * w_reg
        }),
        grad: Box::new(move |x| {
            let mut q = g_params.clone();
            q.assign_flat(x).unwrap();
            let (grads, _, _) = WeightGenerator::backward(&q, &g_pair, 1.0, 2.0).unwrap();
            grads.flat
        }),
        sampler: Box::new(move || loop {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.7..0.7)).collect();
            // Keep every ReLU pre-activation away from zero.
            let mut q = s_params.clone();
            q.assign_flat(&x).unwrap();
            if generator_sample_is_clear(&q, &s_pair) {
                return x;
            }
        }),
        fault_scale: 1.0,
    }
}

fn generator_sample_is_clear(params: &WeightGeneratorParams, pair: &QueryHiddenPair) -> bool {
    // Re-derive the pre-activations with the public pieces.
    let mut input = pair.h_reg.clone();
    input.extend_from_slice(&pair.h_cls);
    let b1 = params.bn1.inference(&params.conv1.apply(&input));
    if b1.iter().any(|v| v.abs() < MARGIN) {
        return false;
    }
    let a: Vec<f64> = b1
        .iter()
        .map(|&v| 1.0 / (1.0 + (-v.max(0.0)).exp()))
        .collect();
    let branch = |conv2: &crate::linalg::DenseMap,
                  conv3: &crate::linalg::DenseMap,
                  bn3: &crate::reweight::BatchNorm,
                  h: &[f64]| {
        let u = conv2.apply(&a);
        let gated: Vec<f64> = h.iter().zip(&u).map(|(&hv, &uv)| hv * uv).collect();
        bn3.inference(&[conv3.apply(&gated)[0]])[0]
    };
    let b3c = branch(&params.conv2_cls, &params.conv3_cls, &params.bn3_cls, &pair.h_cls);
    if b3c.abs() < MARGIN {
        return false;
    }
    let (c2r, c3r) = (
        params.conv2_reg.as_ref().unwrap_or(&params.conv2_cls),
        params.conv3_reg.as_ref().unwrap_or(&params.conv3_cls),
    );
    let b3r = branch(c2r, c3r, &params.bn3_reg, &pair.h_reg);
    b3r.abs() >= MARGIN
}

/// Builds the full standard suite.
pub fn standard_cases(sp: &SuiteParams) -> Vec<Case> {
    vec![
        case_confidence(sp),
        case_discount(sp),
        case_vfl(sp),
        case_reweighted_cls(sp),
        case_reg(sp),
        case_offset(sp),
        case_attention(sp),
        case_weight_generator(sp),
    ]
}

/// Runs the given cases and returns their reports in order.
pub fn run_cases(cases: Vec<Case>, spec: &FdSpec) -> crate::error::Result<Vec<CheckReport>> {
    cases
        .into_iter()
        .map(|case| {
            let fault = case.fault_scale;
            let grad = case.grad;
            let f = case.f;
            check(
                case.name,
                move |x: &[f64]| f(x),
                move |x: &[f64]| grad(x).into_iter().map(|g| g * fault).collect(),
                case.samples,
                case.sampler,
                spec,
            )
        })
        .collect()
}
