//! Accumulation of matches into interpolated average precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::BBox;
use crate::par::prelude::*;

use super::matching::{match_with_ignore, score_order, IgnoreAwareMatch};
use super::{DetectionRecord, GroundTruthRecord, SizeBucketScheme};

/// Evaluation settings: IoU thresholds, per-image-per-category detection
/// cap, and the size-bucket scheme for the breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub thresholds: Vec<f64>,
    pub max_dets: usize,
    pub scheme: SizeBucketScheme,
}

impl EvalParams {
    pub fn new(scheme: SizeBucketScheme) -> Self {
        Self {
            thresholds: Self::default_thresholds(),
            max_dets: 100,
            scheme,
        }
    }

    /// 0.50:0.05:0.95, built from integers so threshold values compare
    /// exactly against rational IoUs.
    pub fn default_thresholds() -> Vec<f64> {
        (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
    }
}

/// The evaluation report: overall AP, the fixed-threshold AP50/AP75,
/// per-bucket and per-category breakdowns. `None` marks a breakdown with
/// no ground truth to measure against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub scheme: String,
    pub ap: f64,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub per_bucket: Vec<(String, Option<f64>)>,
    pub per_category: Vec<(u64, Option<f64>)>,
    pub num_images: usize,
    pub num_categories: usize,
    pub num_ground_truths: usize,
    pub num_detections: usize,
}

/// (category id, image id) and its boxes: ground truths plus scored
/// detections.
type GroupKey = (u64, u64);
type GroupRecords = (Vec<BBox>, Vec<(BBox, f64)>);

/// Matches for one (image, category) group at every (filter, threshold),
/// plus the counted ground-truth totals per filter.
struct GroupEval {
    category: u64,
    /// `matches[filter][threshold]` in the group's score order.
    matches: Vec<Vec<Vec<IgnoreAwareMatch>>>,
    /// Non-ignored ground truths per filter.
    counted_gts: Vec<usize>,
}

/// Evaluates detections against ground truth.
///
/// AP is averaged over the categories present in the ground truth (a
/// category with no ground truth anywhere is excluded, and its detections
/// can only exist for categories outside the mean) and over all
/// thresholds. Records may arrive in any order; results are a pure
/// function of the record multiset.
pub fn evaluate(
    gts: &[GroundTruthRecord],
    dets: &[DetectionRecord],
    params: &EvalParams,
) -> Result<ApReport> {
    let categories: Vec<u64> = {
        let mut set: Vec<u64> = gts.iter().map(|g| g.category_id).collect();
        set.sort_unstable();
        set.dedup();
        set
    };
    // Half-open (lower, upper] area filters: index 0 is "everything".
    let filters: Vec<Option<(f64, f64)>> = std::iter::once(None)
        .chain(params.scheme.buckets.iter().map(|b| Some((b.lower, b.upper))))
        .collect();

    // Deterministic grouping by (category, image).
    let mut groups: BTreeMap<GroupKey, GroupRecords> = BTreeMap::new();
    for gt in gts {
        groups
            .entry((gt.category_id, gt.image_id))
            .or_default()
            .0
            .push(gt.bbox);
    }
    for det in dets {
        groups
            .entry((det.category_id, det.image_id))
            .or_default()
            .1
            .push((det.bbox, det.score));
    }

    let entries: Vec<(&GroupKey, &GroupRecords)> = groups.iter().collect();
    let evaluated: Vec<GroupEval> = entries
        .par_iter()
        .map(|((category, _image), (g_boxes, d_all))| {
            evaluate_group(*category, g_boxes, d_all, &filters, params)
        })
        .collect();

    // Accumulate per (category, filter, threshold).
    let num_filters = filters.len();
    let num_thresholds = params.thresholds.len();
    let mut ap_table: Vec<Vec<Vec<Option<f64>>>> = Vec::with_capacity(categories.len());
    for &cat in &categories {
        let mut per_filter = Vec::with_capacity(num_filters);
        for fi in 0..num_filters {
            let npig: usize = evaluated
                .iter()
                .filter(|g| g.category == cat)
                .map(|g| g.counted_gts[fi])
                .sum();
            let mut per_threshold = Vec::with_capacity(num_thresholds);
            for ti in 0..num_thresholds {
                let mut pooled: Vec<IgnoreAwareMatch> = Vec::new();
                for g in evaluated.iter().filter(|g| g.category == cat) {
                    pooled.extend_from_slice(&g.matches[fi][ti]);
                }
                per_threshold.push(interpolated_ap(pooled, npig));
            }
            per_filter.push(per_threshold);
        }
        ap_table.push(per_filter);
    }

    let mean_over = |filter: usize, threshold: Option<usize>| -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for per_filter in &ap_table {
            let row = &per_filter[filter];
            let cells: Vec<&Option<f64>> = match threshold {
                Some(t) => vec![&row[t]],
                None => row.iter().collect(),
            };
            for v in cells.into_iter().flatten() {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    };

    let threshold_index = |target: f64| {
        params
            .thresholds
            .iter()
            .position(|&t| (t - target).abs() < 1e-9)
    };

    let per_bucket: Vec<(String, Option<f64>)> = params
        .scheme
        .buckets
        .iter()
        .enumerate()
        .map(|(bi, b)| (b.label.clone(), mean_over(bi + 1, None)))
        .collect();
    let per_category: Vec<(u64, Option<f64>)> = categories
        .iter()
        .enumerate()
        .map(|(ci, &cat)| {
            let row = &ap_table[ci][0];
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            let ap = if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            };
            (cat, ap)
        })
        .collect();

    let num_images = {
        let mut ids: Vec<u64> = gts
            .iter()
            .map(|g| g.image_id)
            .chain(dets.iter().map(|d| d.image_id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };

    Ok(ApReport {
        scheme: params.scheme.name.clone(),
        ap: mean_over(0, None).unwrap_or(0.0),
        ap50: threshold_index(0.50).and_then(|t| mean_over(0, Some(t))),
        ap75: threshold_index(0.75).and_then(|t| mean_over(0, Some(t))),
        per_bucket,
        per_category,
        num_images,
        num_categories: categories.len(),
        num_ground_truths: gts.len(),
        num_detections: dets.len(),
    })
}

fn evaluate_group(
    category: u64,
    g_boxes: &[BBox],
    d_all: &[(BBox, f64)],
    filters: &[Option<(f64, f64)>],
    params: &EvalParams,
) -> GroupEval {
    // Score-sorted detections capped at max_dets.
    let order = score_order(d_all);
    let dets: Vec<(BBox, f64)> = order
        .iter()
        .take(params.max_dets)
        .map(|&i| d_all[i])
        .collect();

    let mut matches = Vec::with_capacity(filters.len());
    let mut counted_gts = Vec::with_capacity(filters.len());
    for filter in filters {
        let in_range = |b: &BBox| match filter {
            None => true,
            Some((lo, hi)) => {
                let a = b.area();
                a > *lo && a <= *hi
            }
        };
        let gt_ignore: Vec<bool> = g_boxes.iter().map(|b| !in_range(b)).collect();
        let det_ignore: Vec<bool> = dets.iter().map(|(b, _)| !in_range(b)).collect();
        counted_gts.push(gt_ignore.iter().filter(|&&i| !i).count());
        let per_threshold: Vec<Vec<IgnoreAwareMatch>> = params
            .thresholds
            .iter()
            .map(|&t| match_with_ignore(g_boxes, &gt_ignore, &dets, &det_ignore, t))
            .collect();
        matches.push(per_threshold);
    }
    GroupEval {
        category,
        matches,
        counted_gts,
    }
}

/// Area under the 101-point interpolated precision-recall curve; `None`
/// when there is no counted ground truth.
fn interpolated_ap(mut pooled: Vec<IgnoreAwareMatch>, npig: usize) -> Option<f64> {
    if npig == 0 {
        return None;
    }
    pooled.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut precision = Vec::with_capacity(pooled.len());
    let mut recall = Vec::with_capacity(pooled.len());
    for m in pooled.iter().filter(|m| !m.ignored) {
        if m.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / npig as f64);
    }

    // Precision envelope: monotone non-increasing from the right.
    for i in (1..precision.len()).rev() {
        if precision[i - 1] < precision[i] {
            precision[i - 1] = precision[i];
        }
    }

    let mut sum = 0.0;
    for j in 0..=100u32 {
        let level = j as f64 / 100.0;
        let idx = recall.partition_point(|&r| r < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Some(sum / 101.0)
}
