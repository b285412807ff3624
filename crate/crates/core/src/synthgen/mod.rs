//! Deterministic synthetic fixtures: scenes, perturbed detections, and
//! query batches.
//!
//! Every generator is a pure function of `(spec, seed)`. Randomness comes
//! from ChaCha8 with one stream per purpose (and per image), so adding a
//! draw to one sub-generator never shifts another's sequence and scenes
//! can be generated in parallel without changing any single scene.

mod query;
mod scene;

pub use query::{generate_query_batch, PositiveQuery, QueryBatch, QueryBatchSpec};
pub use scene::{
    calibrate_center_jitter, generate_dataset, generate_scene, perturb, BucketMix, PerturbSpec,
    SceneSpec,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for RNG streams.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    SceneBoxes = 1,
    Perturb = 2,
    Clutter = 3,
    QueryFeatures = 4,
    QueryOffsets = 5,
    QueryLogits = 6,
    Pyramid = 7,
    Negatives = 8,
    AttentionInit = 9,
}

/// One ChaCha stream per (seed, purpose, image).
pub(crate) fn stream_rng(seed: u64, purpose: Stream, image: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) ^ image);
    rng
}
