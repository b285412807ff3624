//! Numerical toolkit for small-object detection training objectives.
//!
//! The crate groups the pieces needed to study detection losses at desk
//! scale, without a deep-learning framework:
//!
//! * [`geometry`] — axis-aligned boxes, IoU, area ratios, containment.
//! * [`scale_target`] — the scale-aligned confidence chain `r, v, c, t`
//!   that blends IoU and box-area ratio into a classification target.
//! * [`deform`] — a toy multi-scale deformable-attention forward pass,
//!   the inside/outside partition of sampling points, and the two
//!   sample-point refinement losses (offset and attention).
//! * [`reweight`] — varifocal classification loss, box regression loss,
//!   the per-query weight generator network, and the confidence-gap
//!   discount producing the final reweighted losses.
//! * [`evalmap`] — COCO-style average precision over IoU thresholds
//!   0.50:0.05:0.95 with size-bucket breakdowns, plus COCO JSON I/O.
//! * [`synthgen`] — deterministic synthetic scenes, perturbed detections
//!   and query fixtures so everything is testable without datasets.
//! * [`gradcheck`] — central finite-difference verification of every
//!   analytic gradient in the crate.
//!
//! All floating-point state is `f64`. Data-parallel loops use rayon when
//! the `parallel` feature (default) is enabled and fall back to the
//! equivalent sequential iterators without it; observable results are
//! identical either way because parallel maps collect in index order and
//! reductions run sequentially.

// Guards written as `!(x > 0.0)` intentionally reject NaN; the
// `x <= 0.0` form clippy suggests would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deform;
pub mod error;
pub mod evalmap;
pub mod geometry;
pub mod gradcheck;
pub mod linalg;
pub(crate) mod par;
pub mod reweight;
pub mod scale_target;
pub mod synthgen;

pub use error::{Error, Result};
pub use geometry::{BBox, NormalizedPoint};
