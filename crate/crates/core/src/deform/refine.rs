//! Inside/outside partition of sampling points and the two refinement
//! losses constraining them.
//!
//! For a positive query, sampling points that fall outside the query's
//! previous-layer box are pulled toward an offset of magnitude
//! `eta * (w, h)` per axis (offset loss) and their attention weights are
//! hinged below the best inside weight of the same (head, level) group
//! (attention loss). Inside points contribute nothing to either loss.
//!
//! Both losses sum over the supplied states; callers pass the states of
//! positive queries only. Accumulation is sequential in input order so
//! results are bit-reproducible; any evaluation order agrees up to
//! floating-point reassociation.

use crate::geometry::{BBox, NormalizedPoint};

use super::{ImageSize, LevelGeom, SamplingState};

use crate::par::prelude::*;

/// Fills `inside_mask`: entry `(m, l, k)` is true iff the absolute sample
/// location `phi_l(p) + dp[m,l,k]`, mapped back to image coordinates,
/// lies in `prev_box` (closed-box containment).
pub fn partition_points(
    state: &mut SamplingState,
    prev_box: &BBox,
    ref_point: NormalizedPoint,
    levels: &[LevelGeom],
    image: ImageSize,
) {
    debug_assert_eq!(levels.len(), state.num_levels);
    for m in 0..state.num_heads {
        for (l, geom) in levels.iter().enumerate() {
            let bx = ref_point.px() * geom.width as f64;
            let by = ref_point.py() * geom.height as f64;
            let sx = image.width / geom.width as f64;
            let sy = image.height / geom.height as f64;
            for k in 0..state.num_points {
                let idx = state.idx(m, l, k);
                let [ox, oy] = state.offsets[idx];
                let img_x = (bx + ox) * sx;
                let img_y = (by + oy) * sy;
                state.inside_mask[idx] = prev_box.contains(img_x, img_y);
            }
        }
    }
}

/// Per-axis offset target for an outside point: `eta * (w, h)` of the
/// previous-layer box, converted to the level's pixel scale and signed
/// like the existing offset so points are pulled toward the expanded
/// boundary on their own side. `sign(0) = 0`.
#[inline]
fn offset_target(offset: [f64; 2], eta: f64, prev_box: &BBox, geom: LevelGeom, image: ImageSize) -> [f64; 2] {
    let wl = eta * prev_box.w * geom.width as f64 / image.width;
    let hl = eta * prev_box.h * geom.height as f64 / image.height;
    [offset[0].signum_or_zero() * wl, offset[1].signum_or_zero() * hl]
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    #[inline]
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Offset refinement loss: for every outside point, the squared L1 gap
/// `(|dx - tx| + |dy - ty|)^2` to its per-axis target. Inside points
/// contribute zero. `inside_mask` must already be populated.
pub fn offset_loss(
    states: &[SamplingState],
    prev_boxes: &[BBox],
    eta: f64,
    levels: &[LevelGeom],
    image: ImageSize,
) -> f64 {
    debug_assert_eq!(states.len(), prev_boxes.len());
    let per_query: Vec<f64> = states
        .par_iter()
        .zip(prev_boxes.par_iter())
        .map(|(state, prev_box)| {
            let mut acc = 0.0;
            for m in 0..state.num_heads {
                for (l, geom) in levels.iter().enumerate() {
                    for k in 0..state.num_points {
                        let idx = state.idx(m, l, k);
                        if state.inside_mask[idx] {
                            continue;
                        }
                        let off = state.offsets[idx];
                        let [tx, ty] = offset_target(off, eta, prev_box, *geom, image);
                        let gap = (off[0] - tx).abs() + (off[1] - ty).abs();
                        acc += gap * gap;
                    }
                }
            }
            acc
        })
        .collect();
    per_query.iter().sum()
}

/// Analytic gradient of [`offset_loss`] w.r.t. every offset, one
/// `[d/dx, d/dy]` per (state, point). The inside/outside partition and
/// the target sign are treated as locally constant; the subgradient is 0
/// exactly at L1 kinks.
pub fn offset_loss_grad(
    states: &[SamplingState],
    prev_boxes: &[BBox],
    eta: f64,
    levels: &[LevelGeom],
    image: ImageSize,
) -> Vec<Vec<[f64; 2]>> {
    states
        .iter()
        .zip(prev_boxes)
        .map(|(state, prev_box)| {
            let mut grads = vec![[0.0, 0.0]; state.len()];
            for m in 0..state.num_heads {
                for (l, geom) in levels.iter().enumerate() {
                    for k in 0..state.num_points {
                        let idx = state.idx(m, l, k);
                        if state.inside_mask[idx] {
                            continue;
                        }
                        let off = state.offsets[idx];
                        let [tx, ty] = offset_target(off, eta, prev_box, *geom, image);
                        let gx = off[0] - tx;
                        let gy = off[1] - ty;
                        let gap = gx.abs() + gy.abs();
                        grads[idx] = [
                            2.0 * gap * gx.signum_or_zero(),
                            2.0 * gap * gy.signum_or_zero(),
                        ];
                    }
                }
            }
            grads
        })
        .collect()
}

/// Attention refinement loss: per (head, level) group, each outside
/// weight pays `max(A_out - ref, 0)` where `ref` is the maximum inside
/// weight of the group (minimum when `strict_min` is set). Groups without
/// inside points use `ref = 0`, penalizing every outside weight fully.
pub fn attention_loss(states: &[SamplingState], strict_min: bool) -> f64 {
    let per_query: Vec<f64> = states
        .par_iter()
        .map(|state| attention_loss_one(state, strict_min))
        .collect();
    per_query.iter().sum()
}

fn inside_reference(state: &SamplingState, m: usize, l: usize, strict_min: bool) -> (f64, Option<usize>) {
    let mut best: Option<(f64, usize)> = None;
    for k in 0..state.num_points {
        let idx = state.idx(m, l, k);
        if !state.inside_mask[idx] {
            continue;
        }
        let a = state.weights[idx];
        let better = match best {
            None => true,
            Some((cur, _)) => {
                if strict_min {
                    a < cur
                } else {
                    a > cur
                }
            }
        };
        if better {
            best = Some((a, idx));
        }
    }
    match best {
        Some((a, idx)) => (a, Some(idx)),
        None => (0.0, None),
    }
}

fn attention_loss_one(state: &SamplingState, strict_min: bool) -> f64 {
    let mut acc = 0.0;
    for m in 0..state.num_heads {
        for l in 0..state.num_levels {
            let (reference, _) = inside_reference(state, m, l, strict_min);
            for k in 0..state.num_points {
                let idx = state.idx(m, l, k);
                if state.inside_mask[idx] {
                    continue;
                }
                acc += (state.weights[idx] - reference).max(0.0);
            }
        }
    }
    acc
}

/// Analytic gradient of [`attention_loss`] w.r.t. every attention weight.
/// Each active hinge adds +1 on the outside weight and -1 on the group's
/// reference weight; the subgradient is 0 at exact hinge boundaries.
pub fn attention_loss_grad(states: &[SamplingState], strict_min: bool) -> Vec<Vec<f64>> {
    states
        .iter()
        .map(|state| {
            let mut grads = vec![0.0; state.len()];
            for m in 0..state.num_heads {
                for l in 0..state.num_levels {
                    let (reference, ref_idx) = inside_reference(state, m, l, strict_min);
                    for k in 0..state.num_points {
                        let idx = state.idx(m, l, k);
                        if state.inside_mask[idx] {
                            continue;
                        }
                        if state.weights[idx] - reference > 0.0 {
                            grads[idx] += 1.0;
                            if let Some(r) = ref_idx {
                                grads[r] -= 1.0;
                            }
                        }
                    }
                }
            }
            grads
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn np(x: f64, y: f64) -> NormalizedPoint {
        NormalizedPoint::new(x, y).unwrap()
    }

    fn image() -> ImageSize {
        ImageSize {
            width: 64.0,
            height: 64.0,
        }
    }

    fn one_level() -> Vec<LevelGeom> {
        vec![LevelGeom {
            width: 64,
            height: 64,
        }]
    }

    fn state_with(offsets: Vec<[f64; 2]>, weights: Vec<f64>, levels: usize, points: usize) -> SamplingState {
        let n = offsets.len();
        assert_eq!(n, levels * points);
        SamplingState {
            num_heads: 1,
            num_levels: levels,
            num_points: points,
            offsets,
            weights,
            inside_mask: vec![false; n],
        }
    }

    #[test]
    fn partition_center_reference_zero_offsets_all_inside() {
        let prev = BBox::new(24.0, 24.0, 16.0, 16.0).unwrap();
        let mut state = state_with(vec![[0.0, 0.0]; 2], vec![0.5, 0.5], 1, 2);
        partition_points(&mut state, &prev, np(0.5, 0.5), &one_level(), image());
        assert!(state.inside_mask.iter().all(|&b| b));
    }

    #[test]
    fn partition_beyond_image_bounds_all_outside() {
        let prev = BBox::new(24.0, 24.0, 16.0, 16.0).unwrap();
        let mut state = state_with(vec![[500.0, 500.0], [-500.0, 0.0]], vec![0.5, 0.5], 1, 2);
        partition_points(&mut state, &prev, np(0.5, 0.5), &one_level(), image());
        assert!(state.inside_mask.iter().all(|&b| !b));
    }

    #[test]
    fn partition_mixed_case() {
        let prev = BBox::new(24.0, 24.0, 16.0, 16.0).unwrap();
        // Reference maps to (32, 32); first point stays at the center,
        // second lands at (52, 32), outside the box (right edge 40).
        let mut state = state_with(vec![[0.0, 0.0], [20.0, 0.0]], vec![0.5, 0.5], 1, 2);
        partition_points(&mut state, &prev, np(0.5, 0.5), &one_level(), image());
        assert_eq!(state.inside_mask, vec![true, false]);
    }

    #[test]
    fn partition_respects_level_scale() {
        // A level at half the image resolution: level units are 2 image px.
        let levels = vec![LevelGeom {
            width: 32,
            height: 32,
        }];
        let prev = BBox::new(24.0, 24.0, 16.0, 16.0).unwrap();
        // Reference (0.5, 0.5) -> (16, 16) in level units = (32, 32) image.
        // Offset (3, 0) -> level (19, 16) -> image (38, 32): inside.
        // Offset (5, 0) -> level (21, 16) -> image (42, 32): outside.
        let mut state = state_with(vec![[3.0, 0.0], [5.0, 0.0]], vec![0.5, 0.5], 1, 2);
        partition_points(&mut state, &prev, np(0.5, 0.5), &levels, image());
        assert_eq!(state.inside_mask, vec![true, false]);
    }

    #[test]
    fn offset_loss_zero_when_all_inside() {
        let prev = BBox::new(24.0, 24.0, 16.0, 16.0).unwrap();
        let mut state = state_with(vec![[1.0, 1.0], [-2.0, 0.5]], vec![0.5, 0.5], 1, 2);
        partition_points(&mut state, &prev, np(0.5, 0.5), &one_level(), image());
        assert!(state.inside_mask.iter().all(|&b| b));
        let loss = offset_loss(&[state], &[prev], 1.5, &one_level(), image());
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn offset_loss_zero_at_exact_target() {
        let prev = BBox::new(24.0, 24.0, 16.0, 16.0).unwrap();
        let eta = 1.5;
        // Target magnitude = eta * (16, 16) in image px = level px here.
        let mut state = state_with(vec![[24.0, 24.0]], vec![1.0], 1, 1);
        partition_points(&mut state, &prev, np(0.5, 0.5), &one_level(), image());
        assert_eq!(state.inside_mask, vec![false]);
        let loss = offset_loss(&[state], &[prev], eta, &one_level(), image());
        assert_relative_eq!(loss, 0.0, epsilon = 1e-24);
    }

    #[test]
    fn offset_loss_hand_worked_example() {
        // eta * (w, h) converts to (0.2, 0.1) in level units; the offset
        // (0.5, 0.5) gives gap (0.3 + 0.4)^2 = 0.49.
        let image = ImageSize {
            width: 64.0,
            height: 64.0,
        };
        let levels = vec![LevelGeom {
            width: 64,
            height: 64,
        }];
        let prev = BBox::new(31.9, 31.95, 0.2, 0.1).unwrap();
        let mut state = state_with(vec![[0.5, 0.5]], vec![1.0], 1, 1);
        partition_points(&mut state, &prev, np(0.5, 0.5), &levels, image);
        assert_eq!(state.inside_mask, vec![false]);
        let loss = offset_loss(&[state], &[prev], 1.0, &levels, image);
        assert_relative_eq!(loss, 0.49, max_relative = 1e-12);
    }

    #[test]
    fn offset_target_follows_offset_sign() {
        let prev = BBox::new(0.0, 0.0, 8.0, 4.0).unwrap();
        let geom = LevelGeom {
            width: 64,
            height: 64,
        };
        let img = image();
        let t = offset_target([-3.0, 2.0], 2.0, &prev, geom, img);
        assert_eq!(t, [-16.0, 8.0]);
        let t0 = offset_target([0.0, -1.0], 2.0, &prev, geom, img);
        assert_eq!(t0, [0.0, -8.0]);
    }

    #[test]
    fn shrinking_eta_weakly_increases_offset_loss() {
        let prev = BBox::new(24.0, 24.0, 4.0, 4.0).unwrap();
        let mk = |offs: Vec<[f64; 2]>| {
            let n = offs.len();
            let mut s = state_with(offs, vec![1.0 / n as f64; n], 1, n);
            partition_points(&mut s, &prev, np(0.5, 0.5), &one_level(), image());
            s
        };
        // Offsets beyond eta * (w, h) for every eta in [1, 2].
        let state = mk(vec![[30.0, 30.0], [-25.0, 12.0]]);
        let mut last = f64::NEG_INFINITY;
        for eta in [2.0, 1.5, 1.2, 1.0] {
            let loss = offset_loss(
                std::slice::from_ref(&state),
                &[prev],
                eta,
                &one_level(),
                image(),
            );
            assert!(loss >= last);
            last = loss;
        }
    }

    #[test]
    fn attention_loss_inactive_hinge_is_zero() {
        let mut state = state_with(
            vec![[0.0, 0.0], [9.0, 9.0]],
            vec![0.7, 0.3],
            1,
            2,
        );
        state.inside_mask = vec![true, false];
        assert_eq!(attention_loss(&[state], false), 0.0);
    }

    #[test]
    fn attention_loss_no_outside_points_is_zero() {
        let mut state = state_with(vec![[0.0, 0.0]; 3], vec![0.2, 0.3, 0.5], 1, 3);
        state.inside_mask = vec![true, true, true];
        assert_eq!(attention_loss(&[state], false), 0.0);
    }

    #[test]
    fn attention_loss_hand_worked_example() {
        let mut state = state_with(vec![[0.0, 0.0], [9.0, 9.0]], vec![0.3, 0.5], 1, 2);
        state.inside_mask = vec![true, false];
        assert_relative_eq!(attention_loss(&[state], false), 0.2, max_relative = 1e-12);
    }

    #[test]
    fn attention_loss_empty_inside_group_penalizes_fully() {
        let mut state = state_with(vec![[9.0, 9.0], [8.0, 8.0]], vec![0.6, 0.4], 1, 2);
        state.inside_mask = vec![false, false];
        assert_relative_eq!(attention_loss(&[state], false), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn strict_min_compares_against_minimum_inside_weight() {
        let mut state = state_with(
            vec![[0.0, 0.0], [0.0, 0.0], [9.0, 9.0]],
            vec![0.5, 0.1, 0.4],
            1,
            3,
        );
        state.inside_mask = vec![true, true, false];
        // vs max inside (0.5): hinge inactive.
        assert_eq!(attention_loss(std::slice::from_ref(&state), false), 0.0);
        // vs min inside (0.1): 0.4 - 0.1 = 0.3.
        assert_relative_eq!(
            attention_loss(std::slice::from_ref(&state), true),
            0.3,
            max_relative = 1e-12
        );
    }

    #[test]
    fn attention_loss_bounded_by_outside_mass() {
        let mut state = state_with(
            vec![[0.0, 0.0], [9.0, 9.0], [8.0, 8.0], [7.0, 7.0]],
            vec![0.1, 0.4, 0.3, 0.2],
            2,
            2,
        );
        state.inside_mask = vec![true, false, false, false];
        let outside_mass: f64 = state
            .weights
            .iter()
            .zip(&state.inside_mask)
            .filter(|(_, &inside)| !inside)
            .map(|(a, _)| a)
            .sum();
        let loss = attention_loss(&[state], false);
        assert!(loss <= outside_mass + 1e-15);
    }

    #[test]
    fn grad_of_inside_point_offset_is_zero() {
        let prev = BBox::new(24.0, 24.0, 16.0, 16.0).unwrap();
        let mut state = state_with(vec![[0.0, 0.0], [30.0, 30.0]], vec![0.5, 0.5], 1, 2);
        partition_points(&mut state, &prev, np(0.5, 0.5), &one_level(), image());
        assert_eq!(state.inside_mask, vec![true, false]);
        let g = offset_loss_grad(&[state], &[prev], 1.5, &one_level(), image());
        assert_eq!(g[0][0], [0.0, 0.0]);
        assert!(g[0][1][0] != 0.0 || g[0][1][1] != 0.0);
    }

    #[test]
    fn grad_of_inactive_hinge_is_zero() {
        let mut state = state_with(vec![[0.0, 0.0], [9.0, 9.0]], vec![0.7, 0.2], 1, 2);
        state.inside_mask = vec![true, false];
        let g = attention_loss_grad(&[state], false);
        assert_eq!(g[0], vec![0.0, 0.0]);
    }

    #[test]
    fn attention_grad_active_hinge_pushes_down_outside_up_inside() {
        let mut state = state_with(vec![[0.0, 0.0], [9.0, 9.0]], vec![0.3, 0.5], 1, 2);
        state.inside_mask = vec![true, false];
        let g = attention_loss_grad(&[state], false);
        assert_eq!(g[0], vec![-1.0, 1.0]);
    }

    #[test]
    fn loss_sums_are_order_independent_up_to_reassociation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let prev: Vec<BBox> = (0..32)
            .map(|_| {
                BBox::new(
                    rng.random_range(4.0..40.0),
                    rng.random_range(4.0..40.0),
                    rng.random_range(2.0..12.0),
                    rng.random_range(2.0..12.0),
                )
                .unwrap()
            })
            .collect();
        let states: Vec<SamplingState> = prev
            .iter()
            .map(|b| {
                let offsets: Vec<[f64; 2]> = (0..4)
                    .map(|_| [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)])
                    .collect();
                let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut s = SamplingState::from_logits(1, 2, 2, offsets, &logits).unwrap();
                partition_points(&mut s, b, np(0.5, 0.5), &two_levels(), image());
                s
            })
            .collect();

        let fwd = offset_loss(&states, &prev, 1.3, &two_levels(), image());
        let mut rev_states = states.clone();
        let mut rev_prev = prev.clone();
        rev_states.reverse();
        rev_prev.reverse();
        let rev = offset_loss(&rev_states, &rev_prev, 1.3, &two_levels(), image());
        assert_relative_eq!(fwd, rev, max_relative = 1e-9);

        let a_fwd = attention_loss(&states, false);
        let a_rev = attention_loss(&rev_states, false);
        assert_relative_eq!(a_fwd, a_rev, max_relative = 1e-9);
    }

    fn two_levels() -> Vec<LevelGeom> {
        vec![
            LevelGeom {
                width: 64,
                height: 64,
            },
            LevelGeom {
                width: 32,
                height: 32,
            },
        ]
    }
}
