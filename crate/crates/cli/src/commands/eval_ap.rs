//! The `eval-ap` command: COCO-format files in, AP report out.

use std::path::Path;

use anyhow::{bail, Result};

use sodet_core::evalmap::{evaluate, read_detections, read_ground_truth, EvalParams, SizeBucketScheme};

use crate::config::RunConfig;
use crate::report::{num, opt_num, render_table, write_report, ReportDoc};

pub fn scheme_from_name(name: &str) -> Result<SizeBucketScheme> {
    match SizeBucketScheme::by_name(name) {
        Some(s) => Ok(s),
        None => bail!("unknown size-bucket scheme {name:?}; expected visdrone or soda-d"),
    }
}

pub fn run(config: &RunConfig, gt_path: &Path, det_path: &Path, scheme: &str) -> Result<()> {
    let scheme = scheme_from_name(scheme)?;
    let (gts, meta) = read_ground_truth(gt_path)?;
    let dets = read_detections(det_path, &meta)?;
    let report = evaluate(&gts, &dets, &EvalParams::new(scheme))?;

    let mut rows: Vec<(String, String)> = vec![
        ("scheme".into(), report.scheme.clone()),
        ("AP".into(), num(report.ap)),
        ("AP50".into(), opt_num(report.ap50)),
        ("AP75".into(), opt_num(report.ap75)),
    ];
    for (label, ap) in &report.per_bucket {
        rows.push((format!("AP_{label}"), opt_num(*ap)));
    }
    for (cat, ap) in &report.per_category {
        rows.push((format!("AP[category {cat}]"), opt_num(*ap)));
    }
    rows.push(("images".into(), report.num_images.to_string()));
    rows.push(("ground truths".into(), report.num_ground_truths.to_string()));
    rows.push(("detections".into(), report.num_detections.to_string()));

    let table = render_table("average precision", &rows);
    let doc = ReportDoc::new("eval-ap", config, serde_json::to_value(&report)?);
    let (json_path, txt_path) = write_report(&doc, &table)?;
    print!("{table}");
    println!("report: {} / {}", json_path.display(), txt_path.display());
    Ok(())
}
