//! The attention forward pass: reference-point mapping, bilinear feature
//! lookup, and the per-head weighted aggregation.

use crate::geometry::NormalizedPoint;

use super::{AttentionParams, FeatureLevel, FeaturePyramid, LevelGeom, SamplingState};

/// Maps a normalized reference point into level-pixel coordinates:
/// `(px * W_l, py * H_l)`.
#[inline]
pub fn ref_to_level(p: NormalizedPoint, level: LevelGeom) -> (f64, f64) {
    (p.px() * level.width as f64, p.py() * level.height as f64)
}

/// Bilinear interpolation at a fractional level coordinate.
///
/// Cell `(ix, iy)` is centered at `(ix + 0.5, iy + 0.5)`; neighbors
/// falling off the grid contribute zeros, so coordinates fully outside
/// yield the zero vector.
pub fn bilinear_sample(level: &FeatureLevel, q: (f64, f64)) -> Vec<f64> {
    let gx = q.0 - 0.5;
    let gy = q.1 - 0.5;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;

    let mut out = vec![0.0; level.channels];
    for (dy, wy) in [(0i64, 1.0 - fy), (1i64, fy)] {
        let cy = y0 as i64 + dy;
        if cy < 0 || cy >= level.height as i64 || wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1i64, fx)] {
            let cx = x0 as i64 + dx;
            if cx < 0 || cx >= level.width as i64 || wx == 0.0 {
                continue;
            }
            let w = wx * wy;
            let feat = level.feature(cy as usize, cx as usize);
            for (o, &f) in out.iter_mut().zip(feat) {
                *o += w * f;
            }
        }
    }
    out
}

/// Deformable-attention output for one query:
/// `sum_m W_m [ sum_{l,k} A[m,l,k] * W'_m * sample(level l, phi_l(p) + dp[m,l,k]) ]`.
///
/// Weights are assumed softmax-normalized (see
/// [`SamplingState::from_logits`]). The inner projection is hoisted out
/// of the (level, point) sum by linearity.
pub fn attention_forward(
    ref_point: NormalizedPoint,
    pyramid: &FeaturePyramid,
    state: &SamplingState,
    params: &AttentionParams,
) -> Vec<f64> {
    debug_assert_eq!(state.num_levels, pyramid.levels.len());
    debug_assert_eq!(params.channels, pyramid.channels());
    debug_assert_eq!(params.num_heads, state.num_heads);

    let channels = params.channels;
    let head_dim = params.head_dim();
    let mut out = vec![0.0; channels];

    for m in 0..state.num_heads {
        // sum_{l,k} A * x in feature space, projected once per head.
        let mut pooled = vec![0.0; channels];
        for (l, level) in pyramid.levels.iter().enumerate() {
            let (bx, by) = ref_to_level(ref_point, level.geometry());
            for k in 0..state.num_points {
                let a = state.weight(m, l, k);
                let [ox, oy] = state.offset(m, l, k);
                let sample = bilinear_sample(level, (bx + ox, by + oy));
                for (p, s) in pooled.iter_mut().zip(&sample) {
                    *p += a * s;
                }
            }
        }
        let head = params.w_val[m].apply(&pooled);
        debug_assert_eq!(head.len(), head_dim);
        let projected = params.w_out[m].apply(&head);
        for (o, v) in out.iter_mut().zip(&projected) {
            *o += v;
        }
    }
    out
}
