//! Query fixtures for the sampling and reweighting losses: one positive
//! query per ground-truth object, optional negatives, a random feature
//! pyramid, and sampling states with a controllable outside fraction.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::deform::{
    partition_points, AttentionParams, FeatureLevel, FeaturePyramid, ImageSize, LevelGeom,
    SamplingConfig, SamplingState,
};
use crate::error::Result;
use crate::evalmap::GroundTruthRecord;
use crate::geometry::{BBox, NormalizedPoint};
use crate::linalg::DenseMap;
use crate::reweight::QueryHiddenPair;

use super::{stream_rng, Stream};

/// Knobs of the query fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryBatchSpec {
    /// Feature width C of hidden vectors and pyramid channels.
    pub channels: usize,
    /// Expected fraction of sampling points falling outside the box.
    pub outside_fraction: f64,
    /// Unmatched queries added per image.
    pub num_negatives: usize,
    /// Divisor from image pixels to the first pyramid level.
    pub level0_stride: usize,
}

impl Default for QueryBatchSpec {
    fn default() -> Self {
        Self {
            channels: 8,
            outside_fraction: 0.5,
            num_negatives: 4,
            level0_stride: 8,
        }
    }
}

/// One positive query: its ground truth, reference point at the box
/// center, hidden features, and a partitioned sampling state. The
/// previous-decoder-layer box of the fixture is the ground-truth box.
/// The raw attention logits behind `state.weights` are kept so trainers
/// can optimize them directly.
#[derive(Debug, Clone)]
pub struct PositiveQuery {
    pub gt_index: usize,
    pub category_id: u64,
    pub gt_box: BBox,
    pub prev_box: BBox,
    pub ref_point: NormalizedPoint,
    pub hidden: QueryHiddenPair,
    pub state: SamplingState,
    pub attention_logits: Vec<f64>,
}

/// The full fixture for one image.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    pub image: ImageSize,
    pub pyramid: FeaturePyramid,
    pub attention: AttentionParams,
    pub positives: Vec<PositiveQuery>,
    /// Initial scores of unmatched queries.
    pub negative_scores: Vec<f64>,
}

/// Builds the fixture for one image's ground truth.
pub fn generate_query_batch(
    gts: &[GroundTruthRecord],
    image: ImageSize,
    config: &SamplingConfig,
    spec: &QueryBatchSpec,
    seed: u64,
    image_id: u64,
) -> Result<QueryBatch> {
    let levels = pyramid_geometry(image, config.num_levels, spec.level0_stride);
    let pyramid = random_pyramid(&levels, spec.channels, seed, image_id)?;
    let attention = random_attention(config.num_heads, spec.channels, seed, image_id)?;

    let mut feat_rng = stream_rng(seed, Stream::QueryFeatures, image_id);
    let mut off_rng = stream_rng(seed, Stream::QueryOffsets, image_id);
    let mut logit_rng = stream_rng(seed, Stream::QueryLogits, image_id);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut positives = Vec::new();
    for (gt_index, gt) in gts.iter().filter(|g| g.image_id == image_id).enumerate() {
        let b = gt.bbox;
        let (cx, cy) = b.center();
        let ref_point = NormalizedPoint::new(
            (cx / image.width).clamp(0.0, 1.0),
            (cy / image.height).clamp(0.0, 1.0),
        )?;
        let hidden = QueryHiddenPair::new(
            (0..spec.channels).map(|_| normal.sample(&mut feat_rng)).collect(),
            (0..spec.channels).map(|_| normal.sample(&mut feat_rng)).collect(),
        )?;

        let n = config.num_heads * config.num_levels * config.num_points;
        let mut offsets = Vec::with_capacity(n);
        for _head in 0..config.num_heads {
            for geom in levels.iter() {
                for _ in 0..config.num_points {
                    let target =
                        sample_target_point(&b, image, spec.outside_fraction, &mut off_rng);
                    // Convert the image-space target into a level offset.
                    let bx = ref_point.px() * geom.width as f64;
                    let by = ref_point.py() * geom.height as f64;
                    let lx = target.0 * geom.width as f64 / image.width;
                    let ly = target.1 * geom.height as f64 / image.height;
                    offsets.push([lx - bx, ly - by]);
                }
            }
        }
        let logits: Vec<f64> = (0..n).map(|_| logit_rng.random_range(-1.5..1.5)).collect();
        let mut state = SamplingState::from_logits(
            config.num_heads,
            config.num_levels,
            config.num_points,
            offsets,
            &logits,
        )?;
        partition_points(&mut state, &b, ref_point, &levels, image);

        positives.push(PositiveQuery {
            gt_index,
            category_id: gt.category_id,
            gt_box: b,
            prev_box: b,
            ref_point,
            hidden,
            state,
            attention_logits: logits,
        });
    }

    let mut neg_rng = stream_rng(seed, Stream::Negatives, image_id);
    let negative_scores: Vec<f64> = (0..spec.num_negatives)
        .map(|_| neg_rng.random_range(0.02..0.6))
        .collect();

    Ok(QueryBatch {
        image,
        pyramid,
        attention,
        positives,
        negative_scores,
    })
}

/// Image-space point either strictly inside the box (5% margin) or
/// strictly outside it, chosen by the outside fraction.
fn sample_target_point(
    b: &BBox,
    image: ImageSize,
    outside_fraction: f64,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let go_outside = rng.random_range(0.0..1.0) < outside_fraction;
    if !go_outside {
        return (
            b.x + b.w * rng.random_range(0.05..0.95),
            b.y + b.h * rng.random_range(0.05..0.95),
        );
    }
    // Rejection-sample a point clear of a slightly expanded box; give up
    // into guaranteed-outside territory beyond the image if the box
    // swallows the whole frame.
    let guard = b.expand(1.02).unwrap_or(*b);
    for _ in 0..64 {
        let p = (
            rng.random_range(0.0..image.width),
            rng.random_range(0.0..image.height),
        );
        if !guard.contains(p.0, p.1) {
            return p;
        }
    }
    (image.width * 2.0, image.height * 2.0)
}

fn pyramid_geometry(image: ImageSize, num_levels: usize, level0_stride: usize) -> Vec<LevelGeom> {
    (0..num_levels)
        .map(|l| {
            let div = level0_stride << l;
            LevelGeom {
                width: ((image.width as usize) / div).max(2),
                height: ((image.height as usize) / div).max(2),
            }
        })
        .collect()
}

fn random_pyramid(
    levels: &[LevelGeom],
    channels: usize,
    seed: u64,
    image_id: u64,
) -> Result<FeaturePyramid> {
    let mut rng = stream_rng(seed, Stream::Pyramid, image_id);
    let feature_levels: Result<Vec<FeatureLevel>> = levels
        .iter()
        .map(|g| {
            let data: Vec<f64> = (0..g.width * g.height * channels)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            FeatureLevel::new(g.height, g.width, channels, data)
        })
        .collect();
    FeaturePyramid::new(feature_levels?)
}

fn random_attention(
    num_heads: usize,
    channels: usize,
    seed: u64,
    image_id: u64,
) -> Result<AttentionParams> {
    let mut rng = stream_rng(seed, Stream::AttentionInit, image_id);
    let head_dim = channels / num_heads.max(1);
    let mut rand_map = |rows: usize, cols: usize| {
        let bound = 1.0 / (cols as f64).sqrt();
        DenseMap::from_weights(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        )
        .expect("consistent shape")
    };
    let w_out: Vec<DenseMap> = (0..num_heads).map(|_| rand_map(channels, head_dim)).collect();
    let w_val: Vec<DenseMap> = (0..num_heads).map(|_| rand_map(head_dim, channels)).collect();
    AttentionParams::new(num_heads, channels, w_out, w_val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{attention_loss, offset_loss};
    use crate::synthgen::{generate_scene, BucketMix, SceneSpec};

    fn scene(seed: u64, num_objects: usize) -> (Vec<GroundTruthRecord>, ImageSize) {
        let spec = SceneSpec {
            image_width: 256.0,
            image_height: 256.0,
            num_objects,
            num_categories: 2,
            size_mix: vec![BucketMix {
                weight: 1.0,
                min_area: 100.0,
                max_area: 2000.0,
            }],
            seed,
        };
        (
            generate_scene(&spec, 1).unwrap(),
            ImageSize {
                width: 256.0,
                height: 256.0,
            },
        )
    }

    fn config() -> SamplingConfig {
        SamplingConfig::new(2, 2, 4, SamplingConfig::default_eta_schedule()).unwrap()
    }

    #[test]
    fn zero_outside_fraction_gives_zero_offset_loss() {
        let (gts, image) = scene(21, 8);
        let spec = QueryBatchSpec {
            outside_fraction: 0.0,
            ..QueryBatchSpec::default()
        };
        let batch = generate_query_batch(&gts, image, &config(), &spec, 21, 1).unwrap();
        let states: Vec<_> = batch.positives.iter().map(|p| p.state.clone()).collect();
        let prevs: Vec<_> = batch.positives.iter().map(|p| p.prev_box).collect();
        let levels = batch.pyramid.geometry();
        assert!(states
            .iter()
            .all(|s| s.inside_mask.iter().all(|&inside| inside)));
        assert_eq!(offset_loss(&states, &prevs, 1.5, &levels, image), 0.0);
        assert_eq!(attention_loss(&states, false), 0.0);
    }

    #[test]
    fn full_outside_fraction_with_tiny_boxes_masks_everything_out() {
        let spec = SceneSpec {
            image_width: 256.0,
            image_height: 256.0,
            num_objects: 6,
            num_categories: 1,
            size_mix: vec![BucketMix {
                weight: 1.0,
                min_area: 9.0,
                max_area: 36.0,
            }],
            seed: 33,
        };
        let gts = generate_scene(&spec, 1).unwrap();
        let image = ImageSize {
            width: 256.0,
            height: 256.0,
        };
        let qspec = QueryBatchSpec {
            outside_fraction: 1.0,
            ..QueryBatchSpec::default()
        };
        let batch = generate_query_batch(&gts, image, &config(), &qspec, 33, 1).unwrap();
        for p in &batch.positives {
            assert!(p.state.inside_mask.iter().all(|&inside| !inside));
        }
    }

    #[test]
    fn partition_counts_match_an_independent_recount() {
        let (gts, image) = scene(55, 8);
        let batch = generate_query_batch(
            &gts,
            image,
            &config(),
            &QueryBatchSpec::default(),
            55,
            1,
        )
        .unwrap();
        let levels = batch.pyramid.geometry();
        for p in &batch.positives {
            let s = &p.state;
            let mut recount_inside = 0usize;
            let mut mask_inside = 0usize;
            for m in 0..s.num_heads {
                for (l, geom) in levels.iter().enumerate() {
                    for k in 0..s.num_points {
                        let idx = s.idx(m, l, k);
                        let [ox, oy] = s.offsets[idx];
                        let px = (p.ref_point.px() * geom.width as f64 + ox) * image.width
                            / geom.width as f64;
                        let py = (p.ref_point.py() * geom.height as f64 + oy) * image.height
                            / geom.height as f64;
                        let inside = px >= p.prev_box.x
                            && px <= p.prev_box.right()
                            && py >= p.prev_box.y
                            && py <= p.prev_box.bottom();
                        if inside {
                            recount_inside += 1;
                        }
                        if s.inside_mask[idx] {
                            mask_inside += 1;
                        }
                        assert_eq!(inside, s.inside_mask[idx]);
                    }
                }
            }
            assert_eq!(recount_inside, mask_inside);
        }
    }

    #[test]
    fn batches_are_deterministic_and_seed_sensitive() {
        let (gts, image) = scene(77, 6);
        let a = generate_query_batch(&gts, image, &config(), &QueryBatchSpec::default(), 77, 1)
            .unwrap();
        let b = generate_query_batch(&gts, image, &config(), &QueryBatchSpec::default(), 77, 1)
            .unwrap();
        assert_eq!(a.positives.len(), b.positives.len());
        for (x, y) in a.positives.iter().zip(&b.positives) {
            assert_eq!(x.state.offsets, y.state.offsets);
            assert_eq!(x.hidden, y.hidden);
        }
        assert_eq!(a.negative_scores, b.negative_scores);

        let c = generate_query_batch(&gts, image, &config(), &QueryBatchSpec::default(), 78, 1)
            .unwrap();
        assert_ne!(a.positives[0].state.offsets, c.positives[0].state.offsets);
    }

    #[test]
    fn weights_are_normalized_per_head() {
        let (gts, image) = scene(91, 5);
        let batch = generate_query_batch(
            &gts,
            image,
            &config(),
            &QueryBatchSpec::default(),
            91,
            1,
        )
        .unwrap();
        for p in &batch.positives {
            for s in p.state.head_weight_sums() {
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
