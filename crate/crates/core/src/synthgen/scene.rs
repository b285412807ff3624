//! Scene generation and detection perturbation.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmap::{DetectionRecord, GroundTruthRecord};
use crate::geometry::BBox;
use crate::par::prelude::*;

use super::{stream_rng, Stream};

/// One mixture component: relative weight and the area range boxes are
/// drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketMix {
    pub weight: f64,
    pub min_area: f64,
    pub max_area: f64,
}

/// Scene description: image extent, object count, the size mixture, and
/// the category count. Box aspect ratios are drawn from [0.5, 2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub image_width: f64,
    pub image_height: f64,
    pub num_objects: usize,
    pub num_categories: u64,
    pub size_mix: Vec<BucketMix>,
    pub seed: u64,
}

const ASPECT_MIN: f64 = 0.5;
const ASPECT_MAX: f64 = 2.0;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_width <= 0.0 || self.image_height <= 0.0 {
            return Err(Error::InfeasibleScene("image extent must be positive".into()));
        }
        if self.num_categories == 0 {
            return Err(Error::InfeasibleScene("need at least one category".into()));
        }
        if self.size_mix.is_empty() {
            return Err(Error::InfeasibleScene("size mixture is empty".into()));
        }
        let total_weight: f64 = self.size_mix.iter().map(|m| m.weight).sum();
        if !(total_weight > 0.0) {
            return Err(Error::InfeasibleScene("mixture weights sum to zero".into()));
        }
        for (i, mix) in self.size_mix.iter().enumerate() {
            if mix.weight < 0.0 || !(mix.min_area > 0.0) || mix.max_area <= mix.min_area {
                return Err(Error::InfeasibleScene(format!(
                    "mixture component {i} has an invalid weight or area range"
                )));
            }
            // Worst-case extent at the extreme aspect ratio must fit.
            let worst = (mix.max_area * ASPECT_MAX).sqrt();
            if worst > self.image_width.min(self.image_height) {
                return Err(Error::InfeasibleScene(format!(
                    "mixture component {i}: boxes up to area {} cannot fit a {}x{} image",
                    mix.max_area, self.image_width, self.image_height
                )));
            }
        }
        Ok(())
    }
}

/// Generates the ground truth of one image (ids are 1-based).
pub fn generate_scene(spec: &SceneSpec, image_id: u64) -> Result<Vec<GroundTruthRecord>> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::SceneBoxes, image_id);
    let total_weight: f64 = spec.size_mix.iter().map(|m| m.weight).sum();

    let mut records = Vec::with_capacity(spec.num_objects);
    for _ in 0..spec.num_objects {
        // Categorical draw over mixture components.
        let mut pick = rng.random_range(0.0..total_weight);
        let mut component = &spec.size_mix[0];
        for mix in &spec.size_mix {
            if pick < mix.weight {
                component = mix;
                break;
            }
            pick -= mix.weight;
        }

        // Areas are drawn strictly inside the range so the realized
        // w * h (exact up to one rounding of area / w) cannot cross a
        // bucket boundary.
        let span = component.max_area - component.min_area;
        let area = component.min_area + span * rng.random_range(1e-6..(1.0 - 1e-6));
        let aspect = rng.random_range(ASPECT_MIN..ASPECT_MAX);
        let w = (area * aspect).sqrt();
        let h = area / w;
        debug_assert!(w * h > component.min_area && w * h <= component.max_area);
        let x = rng.random_range(0.0..(spec.image_width - w));
        let y = rng.random_range(0.0..(spec.image_height - h));
        let bbox = BBox::new(x, y, w, h).expect("generated extents are positive");
        let category_id = rng.random_range(1..=spec.num_categories);
        records.push(GroundTruthRecord {
            image_id,
            category_id,
            bbox,
        });
    }
    Ok(records)
}

/// Generates `num_images` scenes (image ids 1..=n) in parallel; each
/// image's content depends only on `(spec, image_id)`.
pub fn generate_dataset(
    spec: &SceneSpec,
    num_images: usize,
) -> Result<Vec<Vec<GroundTruthRecord>>> {
    spec.validate()?;
    let ids: Vec<u64> = (1..=num_images as u64).collect();
    let scenes: Vec<Result<Vec<GroundTruthRecord>>> = ids
        .par_iter()
        .map(|&id| generate_scene(spec, id))
        .collect();
    scenes.into_iter().collect()
}

/// Detection-noise model applied to ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    /// Center shift stddev as a fraction of the box extent per axis.
    pub center_jitter: f64,
    /// Log-normal sigma applied to each extent.
    pub scale_jitter: f64,
    /// Additive Gaussian noise on `score = clamp(IoU + noise, 0, 1)`.
    pub score_noise: f64,
    /// Probability a ground truth produces no detection.
    pub drop_rate: f64,
    /// Expected number of false positives per image (Poisson).
    pub clutter_rate: f64,
    /// Clutter scores are uniform in `[0, clutter_score_max]`.
    pub clutter_score_max: f64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            center_jitter: 0.1,
            scale_jitter: 0.1,
            score_noise: 0.05,
            drop_rate: 0.05,
            clutter_rate: 1.0,
            clutter_score_max: 0.3,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("center_jitter", self.center_jitter),
            ("scale_jitter", self.scale_jitter),
            ("score_noise", self.score_noise),
            ("clutter_rate", self.clutter_rate),
        ] {
            if !(v >= 0.0) {
                return Err(Error::out_of_domain(name, ">= 0", v));
            }
        }
        for (name, v) in [
            ("drop_rate", self.drop_rate),
            ("clutter_score_max", self.clutter_score_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::out_of_domain(name, "in [0, 1]", v));
            }
        }
        Ok(())
    }

    /// Identity model: detections exactly equal ground truth, score 1.
    pub fn identity() -> Self {
        Self {
            center_jitter: 0.0,
            scale_jitter: 0.0,
            score_noise: 0.0,
            drop_rate: 0.0,
            clutter_rate: 0.0,
            clutter_score_max: 0.0,
        }
    }
}

/// Perturbs the ground truth of one image into detections.
///
/// Jitters are expressed as deltas so the identity spec reproduces the
/// ground-truth boxes bit for bit. Clutter categories are drawn from the
/// categories present in the input.
pub fn perturb(
    gts: &[GroundTruthRecord],
    spec: &PerturbSpec,
    image_size: (f64, f64),
    seed: u64,
    image_id: u64,
) -> Result<Vec<DetectionRecord>> {
    spec.validate()?;
    let mut rng = stream_rng(seed, Stream::Perturb, image_id);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut dets = Vec::new();
    for gt in gts.iter().filter(|g| g.image_id == image_id) {
        let dropped = rng.random_range(0.0..1.0) < spec.drop_rate;
        // Draws happen unconditionally so drop decisions do not shift the
        // stream of later objects.
        let n: [f64; 5] = std::array::from_fn(|_| normal.sample(&mut rng));
        if dropped {
            continue;
        }
        let b = gt.bbox;
        let dx = spec.center_jitter * b.w * n[0];
        let dy = spec.center_jitter * b.h * n[1];
        let dw = b.w * ((spec.scale_jitter * n[2]).exp() - 1.0);
        let dh = b.h * ((spec.scale_jitter * n[3]).exp() - 1.0);
        let pred = BBox::new(b.x + dx - 0.5 * dw, b.y + dy - 0.5 * dh, b.w + dw, b.h + dh)
            .expect("log-normal extents stay positive");
        let score = (pred.iou(&b) + spec.score_noise * n[4]).clamp(0.0, 1.0);
        dets.push(DetectionRecord {
            image_id,
            category_id: gt.category_id,
            bbox: pred,
            score,
        });
    }

    if spec.clutter_rate > 0.0 {
        let mut categories: Vec<u64> = gts
            .iter()
            .filter(|g| g.image_id == image_id)
            .map(|g| g.category_id)
            .collect();
        categories.sort_unstable();
        categories.dedup();
        if !categories.is_empty() {
            let mut crng = stream_rng(seed, Stream::Clutter, image_id);
            let count = Poisson::new(spec.clutter_rate)
                .expect("positive rate")
                .sample(&mut crng) as usize;
            let (iw, ih) = image_size;
            for _ in 0..count {
                let w = crng.random_range(2.0..(iw / 8.0).max(2.5));
                let h = crng.random_range(2.0..(ih / 8.0).max(2.5));
                let x = crng.random_range(0.0..(iw - w));
                let y = crng.random_range(0.0..(ih - h));
                let category_id = categories[crng.random_range(0..categories.len())];
                dets.push(DetectionRecord {
                    image_id,
                    category_id,
                    bbox: BBox::new(x, y, w, h).expect("clutter extents positive"),
                    score: crng.random_range(0.0..spec.clutter_score_max),
                });
            }
        }
    }
    Ok(dets)
}

/// Finds the center jitter whose mean achieved IoU hits `target` on unit
/// boxes, by bisection over a simulated jitter-to-IoU map.
pub fn calibrate_center_jitter(target: f64, trials: usize, seed: u64) -> f64 {
    assert!((0.05..1.0).contains(&target), "target IoU {target} out of range");
    let mean_iou = |jitter: f64| -> f64 {
        let mut rng = stream_rng(seed, Stream::Perturb, u64::MAX);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let b = BBox::new(0.0, 0.0, 20.0, 20.0).expect("static box");
        let mut acc = 0.0;
        for _ in 0..trials {
            let dx = jitter * b.w * normal.sample(&mut rng);
            let dy = jitter * b.h * normal.sample(&mut rng);
            let shifted = BBox::new(b.x + dx, b.y + dy, b.w, b.h).expect("shifted box");
            acc += shifted.iou(&b);
        }
        acc / trials as f64
    };
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mean_iou(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
