//! COCO-style average-precision evaluation with size-bucket breakdowns.
//!
//! AP is the area under the 101-point interpolated precision-recall
//! curve, averaged over categories and over the IoU thresholds
//! 0.50:0.05:0.95. Size buckets restrict ground truth to an area range
//! and apply the standard COCO ignore convention: detections matched to
//! out-of-range ground truth, and unmatched detections whose own area is
//! out of range, are neither credited nor penalized.

mod ap;
mod coco;
mod matching;

pub use ap::{evaluate, ApReport, EvalParams};
pub use coco::{
    detections_from_ground_truth, read_detections, read_ground_truth, write_detections,
    write_ground_truth, CocoMeta,
};
pub use matching::match_detections;

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// One ground-truth annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
}

/// One scored detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// One size bucket: the half-open area interval `(lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDef {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
}

/// A named list of size buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucketScheme {
    pub name: String,
    pub buckets: Vec<BucketDef>,
}

impl SizeBucketScheme {
    /// VisDrone: S = (0, 32^2], M = (32^2, 96^2], L = (96^2, inf).
    pub fn visdrone() -> Self {
        let b = |label: &str, lower: f64, upper: f64| BucketDef {
            label: label.to_string(),
            lower,
            upper,
        };
        Self {
            name: "visdrone".to_string(),
            buckets: vec![
                b("S", 0.0, 32.0 * 32.0),
                b("M", 32.0 * 32.0, 96.0 * 96.0),
                b("L", 96.0 * 96.0, f64::INFINITY),
            ],
        }
    }

    /// SODA-D: ES = (0, 144], RS = (144, 400], GS = (400, 1024],
    /// N = (1024, 2000]; larger areas belong to no bucket.
    pub fn soda_d() -> Self {
        let b = |label: &str, lower: f64, upper: f64| BucketDef {
            label: label.to_string(),
            lower,
            upper,
        };
        Self {
            name: "soda-d".to_string(),
            buckets: vec![
                b("ES", 0.0, 144.0),
                b("RS", 144.0, 400.0),
                b("GS", 400.0, 1024.0),
                b("N", 1024.0, 2000.0),
            ],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "visdrone" => Some(Self::visdrone()),
            "soda-d" | "soda_d" => Some(Self::soda_d()),
            _ => None,
        }
    }

    /// Index of the bucket whose `(lower, upper]` interval contains the
    /// area, or `None` beyond the last upper bound.
    pub fn assign_area(&self, area: f64) -> Option<usize> {
        self.buckets
            .iter()
            .position(|b| area > b.lower && area <= b.upper)
    }
}

/// Bucket label for a box, if any.
pub fn assign_bucket<'a>(bbox: &BBox, scheme: &'a SizeBucketScheme) -> Option<&'a str> {
    scheme
        .assign_area(bbox.area())
        .map(|i| scheme.buckets[i].label.as_str())
}
