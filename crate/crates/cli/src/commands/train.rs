//! The `train-demo` command: plain gradient descent (no momentum, no
//! schedules) over a fixed synthetic fixture, jointly minimizing
//! `L_cls + L_reg + L_offset + L_atten`.
//!
//! Trainable state per positive query: sampling offsets, attention
//! logits, a score logit, and box parameters `(cx, cy, ln w, ln h)`;
//! negative queries own a score logit each; one weight-generator
//! parameter set is shared by all queries. The confidence target `t` is
//! recomputed every step and treated as a constant inside the step. The
//! generator's batch norms run in inference mode so the per-query forward
//! stays differentiable in isolation.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sodet_core::deform::{
    attention_loss, attention_loss_grad, offset_loss, offset_loss_grad, partition_points,
    LevelGeom, SamplingState,
};
use sodet_core::geometry::BBox;
use sodet_core::linalg::{softmax, softmax_backward};
use sodet_core::reweight::{
    cross_entropy, discount, discount_grad_s, discount_grad_w, reg_loss_grad, RegPair,
    WeightGenerator, WeightGeneratorParams, PROB_CLAMP,
};
use sodet_core::scale_target::ConfidenceBreakdown;

use crate::config::RunConfig;
use crate::report::{num, render_table, write_report, ReportDoc};

use super::fixture::{build_fixture, generator_rng, ImageFixture};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(0.02, 0.98);
    (p / (1.0 - p)).ln()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Smallest box extent the trainer will produce; updates project back
/// onto it so boxes stay valid.
const MIN_EXTENT: f64 = 1.0;

struct QueryParams {
    offsets: Vec<[f64; 2]>,
    attn_logits: Vec<f64>,
    score_logit: f64,
    /// (cx, cy, w, h) in image pixels.
    box_params: [f64; 4],
}

struct TrainerState {
    fixtures: Vec<ImageFixture>,
    queries: Vec<Vec<QueryParams>>,
    negative_logits: Vec<Vec<f64>>,
    generator: WeightGeneratorParams,
    levels: Vec<LevelGeom>,
    eta: f64,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
struct LossParts {
    cls: f64,
    reg: f64,
    offset: f64,
    atten: f64,
    total: f64,
}

struct StepGrads {
    /// Mirrors `queries`: page per image, entry per positive query.
    queries: Vec<Vec<QueryGrads>>,
    negatives: Vec<Vec<f64>>,
    generator_flat: Vec<f64>,
}

struct QueryGrads {
    offsets: Vec<[f64; 2]>,
    attn_logits: Vec<f64>,
    score_logit: f64,
    box_params: [f64; 4],
}

impl TrainerState {
    fn new(config: &RunConfig) -> Result<Self> {
        let fixtures = build_fixture(config, config.train.num_scenes)?;
        let mut generator_seed = generator_rng(config.seed);
        let generator = WeightGeneratorParams::init(
            config.sampling.channels,
            config.reweight.share_branch_convs,
            &mut generator_seed,
        );
        let levels = fixtures
            .first()
            .map(|f| f.batch.pyramid.geometry())
            .context("trainer needs at least one image")?;

        let queries = fixtures
            .iter()
            .map(|fx| {
                fx.batch
                    .positives
                    .iter()
                    .zip(&fx.preds)
                    .map(|(positive, &(pred_box, score))| {
                        let (cx, cy) = pred_box.center();
                        QueryParams {
                            offsets: positive.state.offsets.clone(),
                            attn_logits: positive.attention_logits.clone(),
                            score_logit: logit(score),
                            box_params: [cx, cy, pred_box.w, pred_box.h],
                        }
                    })
                    .collect()
            })
            .collect();
        let negative_logits = fixtures
            .iter()
            .map(|fx| fx.batch.negative_scores.iter().map(|&s| logit(s)).collect())
            .collect();

        Ok(Self {
            fixtures,
            queries,
            negative_logits,
            generator,
            levels,
            eta: config.sampling.eta_schedule[0],
        })
    }

    fn current_box(params: &QueryParams) -> BBox {
        let [cx, cy, w, h] = params.box_params;
        BBox::from_center(cx, cy, w, h).expect("extents are floored at MIN_EXTENT")
    }

    /// Rebuilds a sampling state from the trainable offsets and logits,
    /// partitioned against the fixture's previous-layer box.
    fn current_state(
        &self,
        image_index: usize,
        query_index: usize,
        params: &QueryParams,
    ) -> SamplingState {
        let fx = &self.fixtures[image_index];
        let positive = &fx.batch.positives[query_index];
        let template = &positive.state;
        let per_head = template.num_levels * template.num_points;
        let mut weights = vec![0.0; params.attn_logits.len()];
        for m in 0..template.num_heads {
            let head = softmax(&params.attn_logits[m * per_head..(m + 1) * per_head]);
            weights[m * per_head..(m + 1) * per_head].copy_from_slice(&head);
        }
        let mut state = SamplingState {
            num_heads: template.num_heads,
            num_levels: template.num_levels,
            num_points: template.num_points,
            offsets: params.offsets.clone(),
            weights,
            inside_mask: vec![false; params.offsets.len()],
        };
        partition_points(
            &mut state,
            &positive.prev_box,
            positive.ref_point,
            &self.levels,
            fx.image,
        );
        state
    }

    /// One full evaluation with gradients for every trainable tensor.
    fn evaluate(&self, config: &RunConfig) -> Result<(LossParts, StepGrads)> {
        let st_params = config.scale_target_params();
        let focal = config.focal_params();
        let strict_min = config.sampling.strict_min;

        let mut cls = 0.0;
        let mut reg = 0.0;
        let mut offset_total = 0.0;
        let mut atten_total = 0.0;
        let mut generator_flat = vec![0.0; self.generator.to_flat().len()];
        let mut all_query_grads = Vec::with_capacity(self.fixtures.len());
        let mut all_negative_grads = Vec::with_capacity(self.fixtures.len());

        for (ii, fx) in self.fixtures.iter().enumerate() {
            let mut image_grads = Vec::with_capacity(self.queries[ii].len());
            for (qi, params) in self.queries[ii].iter().enumerate() {
                let positive = &fx.batch.positives[qi];
                let pred_box = Self::current_box(params);
                let s = sigmoid(params.score_logit);
                let sc = clamp_prob(s);

                let u = pred_box.iou(&positive.gt_box);
                let rho = pred_box.area_ratio(&positive.gt_box);
                let breakdown = ConfidenceBreakdown::compute(
                    u,
                    rho,
                    s,
                    &st_params,
                    config.scale_target.target_mode,
                )?;
                let t = clamp_prob(breakdown.t);

                let (w_cls, w_reg) = WeightGenerator::forward(&self.generator, &positive.hidden)?;
                // Sigmoid outputs can round to exactly 1.0 once the
                // generator saturates; keep the discount in its open
                // domain.
                let w_cls = clamp_prob(w_cls);
                let w_reg = clamp_prob(w_reg);
                let r_cls = discount(w_cls, t, s)?;
                let r_reg = discount(w_reg, t, s)?;

                let ce = cross_entropy(sc, t);
                cls += r_cls * ce;

                let pair = RegPair {
                    pred: pred_box,
                    gt: positive.gt_box,
                    r: r_reg,
                };
                let (pcx, pcy) = pred_box.center();
                let (gcx, gcy) = positive.gt_box.center();
                let base = (pcx - gcx).abs()
                    + (pcy - gcy).abs()
                    + (pred_box.w - positive.gt_box.w).abs()
                    + (pred_box.h - positive.gt_box.h).abs()
                    + (1.0 - u);
                reg += r_reg * base;

                // d cls / d s: through the cross entropy and through both
                // discounts (t held constant).
                let dce_ds = -t / sc + (1.0 - t) / (1.0 - sc);
                let d_s = r_cls * dce_ds
                    + ce * discount_grad_s(w_cls, t, s)?
                    + base * discount_grad_s(w_reg, t, s)?;
                let score_logit_grad = d_s * s * (1.0 - s);

                // Generator gradients through both discounted weights.
                let d_w_cls = ce * discount_grad_w(w_cls, t, s)?;
                let d_w_reg = base * discount_grad_w(w_reg, t, s)?;
                let (gen_grads, _, _) =
                    WeightGenerator::backward(&self.generator, &positive.hidden, d_w_cls, d_w_reg)?;
                for (acc, g) in generator_flat.iter_mut().zip(&gen_grads.flat) {
                    *acc += g;
                }

                // Box gradients in corner form (x, y, w, h), re-expressed
                // for the center parameterization (cx, cy, w, h) via
                // x = cx - w/2.
                let bg = reg_loss_grad(&[pair])[0];
                let box_grads = [bg[0], bg[1], bg[2] - 0.5 * bg[0], bg[3] - 0.5 * bg[1]];

                // Sampling losses on the rebuilt state.
                let state = self.current_state(ii, qi, params);
                let offset = offset_loss(
                    std::slice::from_ref(&state),
                    std::slice::from_ref(&positive.prev_box),
                    self.eta,
                    &self.levels,
                    fx.image,
                );
                offset_total += offset;
                let offset_grads = offset_loss_grad(
                    std::slice::from_ref(&state),
                    std::slice::from_ref(&positive.prev_box),
                    self.eta,
                    &self.levels,
                    fx.image,
                )
                .pop()
                .expect("one state in, one gradient out");

                atten_total += attention_loss(std::slice::from_ref(&state), strict_min);
                let d_weights = attention_loss_grad(std::slice::from_ref(&state), strict_min)
                    .pop()
                    .expect("one state in, one gradient out");
                let per_head = state.num_levels * state.num_points;
                let mut attn_logit_grads = vec![0.0; d_weights.len()];
                for m in 0..state.num_heads {
                    let range = m * per_head..(m + 1) * per_head;
                    let dl = softmax_backward(&state.weights[range.clone()], &d_weights[range.clone()]);
                    attn_logit_grads[range].copy_from_slice(&dl);
                }

                image_grads.push(QueryGrads {
                    offsets: offset_grads,
                    attn_logits: attn_logit_grads,
                    score_logit: score_logit_grad,
                    box_params: box_grads,
                });
            }

            // Negative queries: alpha * s^gamma * CE(s, 0).
            let mut neg_grads = Vec::with_capacity(self.negative_logits[ii].len());
            for &neg_logit in &self.negative_logits[ii] {
                let s = sigmoid(neg_logit);
                let sc = clamp_prob(s);
                cls += focal.alpha * sc.powf(focal.gamma) * cross_entropy(sc, 0.0);
                let d_s = focal.alpha
                    * (focal.gamma * sc.powf(focal.gamma - 1.0) * (-(1.0 - sc).ln())
                        + sc.powf(focal.gamma) / (1.0 - sc));
                neg_grads.push(d_s * s * (1.0 - s));
            }

            all_query_grads.push(image_grads);
            all_negative_grads.push(neg_grads);
        }

        let parts = LossParts {
            cls,
            reg,
            offset: offset_total,
            atten: atten_total,
            total: cls + reg + offset_total + atten_total,
        };
        Ok((
            parts,
            StepGrads {
                queries: all_query_grads,
                negatives: all_negative_grads,
                generator_flat,
            },
        ))
    }

    fn apply(&mut self, grads: &StepGrads, lr: f64) {
        for (ii, image_grads) in grads.queries.iter().enumerate() {
            for (qi, qg) in image_grads.iter().enumerate() {
                let params = &mut self.queries[ii][qi];
                for (o, g) in params.offsets.iter_mut().zip(&qg.offsets) {
                    o[0] -= lr * g[0];
                    o[1] -= lr * g[1];
                }
                for (l, g) in params.attn_logits.iter_mut().zip(&qg.attn_logits) {
                    *l -= lr * g;
                }
                params.score_logit -= lr * qg.score_logit;
                for (b, g) in params.box_params.iter_mut().zip(&qg.box_params) {
                    *b -= lr * g;
                }
                // Project extents back to validity.
                params.box_params[2] = params.box_params[2].max(MIN_EXTENT);
                params.box_params[3] = params.box_params[3].max(MIN_EXTENT);
            }
            for (l, g) in self.negative_logits[ii]
                .iter_mut()
                .zip(&grads.negatives[ii])
            {
                *l -= lr * g;
            }
        }
        let mut flat = self.generator.to_flat();
        for (p, g) in flat.iter_mut().zip(&grads.generator_flat) {
            *p -= lr * g;
        }
        self.generator
            .assign_flat(&flat)
            .expect("flat layout is stable");
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    pub steps: usize,
    pub learning_rate: f64,
    pub initial: serde_json::Value,
    pub fin: serde_json::Value,
    pub total_reduction: f64,
    pub curve_path: String,
}

pub fn run(config: &RunConfig, steps: Option<usize>, lr: Option<f64>) -> Result<()> {
    let steps = steps.unwrap_or(config.train.steps);
    let lr = lr.unwrap_or(config.train.learning_rate);
    if lr.is_nan() || lr < 0.0 {
        bail!("learning rate must be >= 0, got {lr}");
    }

    let mut state = TrainerState::new(config)?;
    let mut curve: Vec<(usize, LossParts)> = Vec::with_capacity(steps + 1);

    let mut first: Option<LossParts> = None;
    for step in 0..steps {
        let (parts, grads) = state
            .evaluate(config)
            .with_context(|| format!("training aborted at step {step}"))?;
        if !parts.total.is_finite() {
            bail!("non-finite total loss at step {step}; aborting");
        }
        if first.is_none() {
            first = Some(parts);
        }
        curve.push((step, parts));
        state.apply(&grads, lr);
    }
    let (final_parts, _) = state
        .evaluate(config)
        .with_context(|| format!("training aborted at step {steps}"))?;
    if !final_parts.total.is_finite() {
        bail!("non-finite total loss at step {steps}; aborting");
    }
    curve.push((steps, final_parts));
    let first = first.unwrap_or(final_parts);

    // Loss curve: one CSV row per step.
    let out_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let curve_path = out_dir.join(format!("train-demo-{}-curve.csv", config.run_id()));
    let mut csv = String::from("step,cls,reg,offset,atten,total\n");
    for (step, p) in &curve {
        csv.push_str(&format!(
            "{step},{},{},{},{},{}\n",
            p.cls, p.reg, p.offset, p.atten, p.total
        ));
    }
    std::fs::write(&curve_path, csv)
        .with_context(|| format!("writing {}", curve_path.display()))?;

    let reduction = if first.total > 0.0 {
        1.0 - final_parts.total / first.total
    } else {
        0.0
    };
    let result = TrainResult {
        steps,
        learning_rate: lr,
        initial: serde_json::to_value(first)?,
        fin: serde_json::to_value(final_parts)?,
        total_reduction: reduction,
        curve_path: curve_path.display().to_string(),
    };

    let rows = vec![
        ("steps".to_string(), steps.to_string()),
        ("learning_rate".to_string(), num(lr)),
        ("initial_total".to_string(), num(first.total)),
        ("final_total".to_string(), num(final_parts.total)),
        ("total_reduction".to_string(), num(reduction)),
        ("final_cls".to_string(), num(final_parts.cls)),
        ("final_reg".to_string(), num(final_parts.reg)),
        ("final_offset".to_string(), num(final_parts.offset)),
        ("final_atten".to_string(), num(final_parts.atten)),
        ("curve".to_string(), curve_path.display().to_string()),
    ];
    let table = render_table("train demo", &rows);
    let doc = ReportDoc::new("train-demo", config, serde_json::to_value(&result)?);
    let (json_path, txt_path) = write_report(&doc, &table)?;
    print!("{table}");
    println!("report: {} / {}", json_path.display(), txt_path.display());
    Ok(())
}
