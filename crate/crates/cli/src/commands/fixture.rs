//! Shared synthetic fixture for the losses and train-demo commands: per
//! image, a scene, its query batch, and one perturbed prediction per
//! positive query.

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sodet_core::deform::ImageSize;
use sodet_core::geometry::BBox;
use sodet_core::synthgen::{generate_scene, generate_query_batch, perturb, PerturbSpec, QueryBatch};

use crate::config::RunConfig;

/// Deterministic stream for weight-generator parameter initialization,
/// kept separate from the synthgen streams.
pub fn generator_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xC0FFEE);
    rng
}

pub struct ImageFixture {
    pub image_id: u64,
    pub image: ImageSize,
    pub batch: QueryBatch,
    /// One (box, score) per positive query, in `batch.positives` order.
    pub preds: Vec<(BBox, f64)>,
}

/// Builds `num_images` image fixtures. Drop and clutter are disabled so
/// every positive query pairs with exactly one prediction.
pub fn build_fixture(config: &RunConfig, num_images: usize) -> Result<Vec<ImageFixture>> {
    let spec = config.scene_spec();
    let image = ImageSize {
        width: spec.image_width,
        height: spec.image_height,
    };
    let sampling = config.sampling_config();
    let query_spec = config.query_batch_spec();
    let paired = PerturbSpec {
        drop_rate: 0.0,
        clutter_rate: 0.0,
        ..config.perturb
    };

    let mut out = Vec::with_capacity(num_images);
    for image_id in 1..=num_images as u64 {
        let ground_truth = generate_scene(&spec, image_id)?;
        let batch = generate_query_batch(
            &ground_truth,
            image,
            &sampling,
            &query_spec,
            config.seed,
            image_id,
        )?;
        let dets = perturb(
            &ground_truth,
            &paired,
            (image.width, image.height),
            config.seed,
            image_id,
        )?;
        debug_assert_eq!(dets.len(), batch.positives.len());
        let preds: Vec<(BBox, f64)> = dets.iter().map(|d| (d.bbox, d.score)).collect();
        out.push(ImageFixture {
            image_id,
            image,
            batch,
            preds,
        });
    }
    Ok(out)
}
