//! The `losses` command: evaluates every loss on a synthetic fixture and
//! reports each positive query's intermediates.

use anyhow::Result;
use serde::Serialize;

use sodet_core::deform::{attention_loss, offset_loss};
use sodet_core::reweight::{
    discount, reg_loss, reweighted_cls_loss, total_loss, PositiveSample, RegPair,
    WeightGenerator, WeightGeneratorParams,
};
use sodet_core::scale_target::ConfidenceBreakdown;

use crate::config::RunConfig;
use crate::report::{num, render_table, write_report, ReportDoc};

use super::fixture::{build_fixture, generator_rng};

#[derive(Debug, Clone, Serialize)]
struct QueryRow {
    image_id: u64,
    query: usize,
    u: f64,
    rho: f64,
    r: f64,
    v: f64,
    c: f64,
    s: f64,
    t: f64,
    w_cls: f64,
    w_reg: f64,
    r_cls: f64,
    r_reg: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossesResult {
    pub cls: f64,
    pub reg: f64,
    pub offset: f64,
    pub atten: f64,
    pub total: f64,
    pub eta: f64,
    pub num_positives: usize,
    pub num_negatives: usize,
    queries: Vec<QueryRow>,
}

pub fn compute(config: &RunConfig) -> Result<LossesResult> {
    let fixtures = build_fixture(config, config.scene.num_images)?;
    let st_params = config.scale_target_params();
    let focal = config.focal_params();
    let mut gen_rng = generator_rng(config.seed);
    let generator = WeightGeneratorParams::init(
        config.sampling.channels,
        config.reweight.share_branch_convs,
        &mut gen_rng,
    );
    // The single-layer fixture trains against the first decoder layer's
    // expansion rate.
    let eta = config.sampling.eta_schedule[0];

    let mut rows = Vec::new();
    let mut positives = Vec::new();
    let mut reg_pairs = Vec::new();
    let mut negatives = Vec::new();
    let mut states = Vec::new();
    let mut prev_boxes = Vec::new();
    let mut levels = Vec::new();

    for fx in &fixtures {
        levels = fx.batch.pyramid.geometry();
        for (qi, positive) in fx.batch.positives.iter().enumerate() {
            let (pred_box, score) = fx.preds[qi];
            let u = pred_box.iou(&positive.gt_box);
            let rho = pred_box.area_ratio(&positive.gt_box);
            let breakdown = ConfidenceBreakdown::compute(
                u,
                rho,
                score,
                &st_params,
                config.scale_target.target_mode,
            )?;
            let (w_cls, w_reg) = WeightGenerator::forward(&generator, &positive.hidden)?;
            let r_cls = discount(w_cls, breakdown.t, score)?;
            let r_reg = discount(w_reg, breakdown.t, score)?;

            rows.push(QueryRow {
                image_id: fx.image_id,
                query: qi,
                u,
                rho,
                r: breakdown.r,
                v: breakdown.v,
                c: breakdown.c,
                s: score,
                t: breakdown.t,
                w_cls,
                w_reg,
                r_cls,
                r_reg,
            });
            positives.push(PositiveSample {
                s: score,
                t: breakdown.t,
                r: r_cls,
            });
            reg_pairs.push(RegPair {
                pred: pred_box,
                gt: positive.gt_box,
                r: r_reg,
            });
            states.push(positive.state.clone());
            prev_boxes.push(positive.prev_box);
        }
        negatives.extend_from_slice(&fx.batch.negative_scores);
    }

    let image = fixtures
        .first()
        .map(|f| f.image)
        .ok_or_else(|| anyhow::anyhow!("fixture produced no images"))?;
    let cls = reweighted_cls_loss(&positives, &negatives, &focal)?;
    let reg = reg_loss(&reg_pairs);
    let offset = offset_loss(&states, &prev_boxes, eta, &levels, image);
    let atten = attention_loss(&states, config.sampling.strict_min);
    let total = total_loss(cls, reg, offset, atten);

    Ok(LossesResult {
        cls,
        reg,
        offset,
        atten,
        total,
        eta,
        num_positives: positives.len(),
        num_negatives: negatives.len(),
        queries: rows,
    })
}

pub fn run(config: &RunConfig) -> Result<()> {
    let result = compute(config)?;
    let mut rows: Vec<(String, String)> = vec![
        ("L_cls".into(), num(result.cls)),
        ("L_reg".into(), num(result.reg)),
        ("L_offset".into(), num(result.offset)),
        ("L_atten".into(), num(result.atten)),
        ("total".into(), num(result.total)),
        ("eta".into(), num(result.eta)),
        ("positives".into(), result.num_positives.to_string()),
        ("negatives".into(), result.num_negatives.to_string()),
    ];
    for q in &result.queries {
        rows.push((
            format!("img{}#{}", q.image_id, q.query),
            format!(
                "u={} rho={} c={} t={} s={} w_cls={} w_reg={} r_cls={} r_reg={}",
                num(q.u),
                num(q.rho),
                num(q.c),
                num(q.t),
                num(q.s),
                num(q.w_cls),
                num(q.w_reg),
                num(q.r_cls),
                num(q.r_reg),
            ),
        ));
    }
    let table = render_table("loss breakdown", &rows);
    let doc = ReportDoc::new("losses", config, serde_json::to_value(&result)?);
    let (json_path, txt_path) = write_report(&doc, &table)?;
    print!("{table}");
    println!("report: {} / {}", json_path.display(), txt_path.display());
    Ok(())
}
