//! Cross-module checks: identities that tie two independent code paths
//! together, and oracle comparisons against deliberately naive
//! re-implementations living only in this file.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sodet_core::evalmap::{
    detections_from_ground_truth, evaluate, match_detections, read_detections, read_ground_truth,
    write_detections, write_ground_truth, CocoMeta, EvalParams, SizeBucketScheme,
};
use sodet_core::geometry::BBox;
use sodet_core::gradcheck::{fd_gradient, FdSpec};
use sodet_core::scale_target::{confidence, confidence_grad, ScaleTargetParams};
use sodet_core::synthgen::{generate_dataset, perturb, BucketMix, PerturbSpec, SceneSpec};

fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x, y, w, h).unwrap()
}

/// Random overlapping box pair: the second box's center stays inside the
/// first box, guaranteeing intersection.
fn overlapping_pair(rng: &mut ChaCha8Rng) -> (BBox, BBox) {
    let a = bb(
        rng.random_range(0.0..100.0),
        rng.random_range(0.0..100.0),
        rng.random_range(1.0..40.0),
        rng.random_range(1.0..40.0),
    );
    let cx = rng.random_range(a.x..a.right());
    let cy = rng.random_range(a.y..a.bottom());
    let w = rng.random_range(1.0..40.0);
    let h = rng.random_range(1.0..40.0);
    let b = BBox::from_center(cx, cy, w, h).unwrap();
    (a, b)
}

/// (z/y) / (rho + 1) = u / (1 + u): both sides reduce to z / (x + y),
/// evaluated through the independent iou and area_ratio paths.
#[test]
fn u_rho_identity_over_ten_thousand_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let (gt, pred) = overlapping_pair(&mut rng);
        let z = pred.intersection_area(&gt);
        assert!(z > 0.0);
        let y = gt.area();
        let rho = pred.area_ratio(&gt);
        let u = pred.iou(&gt);
        let lhs = (z / y) / (rho + 1.0);
        let rhs = u / (1.0 + u);
        assert!(
            (lhs - rhs).abs() <= 1e-9,
            "identity violated: {lhs} vs {rhs}"
        );
    }
}

/// confidence_grad cross-checked against the finite-difference module at
/// a tolerance ten times tighter than the suite default.
#[test]
fn confidence_grad_cross_check() {
    let params = ScaleTargetParams::default();
    let spec = FdSpec {
        eps: 1e-5,
        tolerance: 1e-4,
        kink_radius: 1e-4,
    };
    let f = |x: &[f64]| confidence(x[0], x[1], &params).unwrap();
    let numeric = fd_gradient(&f, &[0.5, 1.2], &spec).unwrap();
    let (du, drho) = confidence_grad(0.5, 1.2, &params).unwrap();
    for (a, n) in [(du, numeric[0]), (drho, numeric[1])] {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
    }
}

/// Dead-simple greedy matcher written independently: explicit double
/// loop, no sort optimizations.
fn reference_greedy(gts: &[BBox], dets: &[(BBox, f64)], threshold: f64) -> Vec<Option<usize>> {
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    // Selection sort by score, preserving input order on ties.
    let mut order = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0usize;
        for (i, &d) in remaining.iter().enumerate() {
            if dets[d].1 > dets[remaining[best]].1 {
                best = i;
            }
        }
        order.push(remaining.remove(best));
    }

    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for d in order {
        let mut best_gt = None;
        let mut best_iou = f64::NEG_INFINITY;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = dets[d].0.iou(gt);
            if iou >= threshold && iou > best_iou {
                best_iou = iou;
                best_gt = Some(g);
            }
        }
        if let Some(g) = best_gt {
            taken[g] = true;
            out[d] = Some(g);
        }
    }
    out
}

#[test]
fn matcher_agrees_with_reference_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    for _ in 0..500 {
        let ng = rng.random_range(0..=4usize);
        let nd = rng.random_range(0..=4usize);
        let gts: Vec<BBox> = (0..ng)
            .map(|_| {
                bb(
                    rng.random_range(0.0..30.0),
                    rng.random_range(0.0..30.0),
                    rng.random_range(2.0..15.0),
                    rng.random_range(2.0..15.0),
                )
            })
            .collect();
        // Distinct scores so the processing order is unique.
        let dets: Vec<(BBox, f64)> = (0..nd)
            .map(|i| {
                (
                    bb(
                        rng.random_range(0.0..30.0),
                        rng.random_range(0.0..30.0),
                        rng.random_range(2.0..15.0),
                        rng.random_range(2.0..15.0),
                    ),
                    rng.random_range(0.0..1.0) + i as f64 * 1e-9,
                )
            })
            .collect();
        let threshold = rng.random_range(0.1..0.8);
        let ours = match_detections(&gts, &dets, threshold);
        let reference = reference_greedy(&gts, &dets, threshold);
        assert_eq!(ours, reference);
        let count = ours.iter().flatten().count();
        let ref_count = reference.iter().flatten().count();
        assert_eq!(count, ref_count);
    }
}

/// With score ties, every processing order consistent with descending
/// score must report the same match count on these fixtures.
#[test]
fn matcher_tie_orders_agree_on_count() {
    let gts = [bb(0.0, 0.0, 10.0, 10.0), bb(20.0, 0.0, 10.0, 10.0)];
    // Two equal-score detections, each overlapping both ground truths
    // equally well through symmetric placement.
    let dets = [
        (bb(1.0, 0.0, 10.0, 10.0), 0.7),
        (bb(19.0, 0.0, 10.0, 10.0), 0.7),
    ];
    let forward = match_detections(&gts, &dets, 0.3);
    let swapped = match_detections(&[gts[1], gts[0]], &[dets[1], dets[0]], 0.3);
    assert_eq!(forward.iter().flatten().count(), 2);
    assert_eq!(swapped.iter().flatten().count(), 2);
}

#[test]
fn synth_to_coco_roundtrip_preserves_evaluation() {
    let spec = SceneSpec {
        image_width: 256.0,
        image_height: 256.0,
        num_objects: 10,
        num_categories: 3,
        size_mix: vec![
            BucketMix {
                weight: 0.5,
                min_area: 64.0,
                max_area: 1024.0,
            },
            BucketMix {
                weight: 0.5,
                min_area: 1024.0,
                max_area: 9216.0,
            },
        ],
        seed: 404,
    };
    let scenes = generate_dataset(&spec, 4).unwrap();
    let gts: Vec<_> = scenes.iter().flatten().copied().collect();
    let dets: Vec<_> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            perturb(s, &PerturbSpec::default(), (256.0, 256.0), 404, i as u64 + 1).unwrap()
        })
        .collect();

    let dir = std::env::temp_dir().join(format!("sodet-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let gt_path = dir.join("gt.json");
    let det_path = dir.join("det.json");

    let mut meta = CocoMeta::default();
    for i in 1..=4u64 {
        meta.images.insert(i, (256.0, 256.0));
    }
    for c in 1..=3u64 {
        meta.categories.insert(c, format!("cat_{c}"));
    }
    write_ground_truth(&gt_path, &gts, &meta).unwrap();
    write_detections(&det_path, &dets).unwrap();

    let (gts2, meta2) = read_ground_truth(&gt_path).unwrap();
    let dets2 = read_detections(&det_path, &meta2).unwrap();
    assert_eq!(gts, gts2);
    assert_eq!(dets, dets2);

    let params = EvalParams::new(SizeBucketScheme::visdrone());
    let direct = evaluate(&gts, &dets, &params).unwrap();
    let roundtripped = evaluate(&gts2, &dets2, &params).unwrap();
    assert_eq!(direct.ap.to_bits(), roundtripped.ap.to_bits());
    assert_eq!(direct.per_bucket, roundtripped.per_bucket);
}

#[test]
fn perfect_detections_from_ground_truth_reach_ap_one() {
    let spec = SceneSpec {
        image_width: 512.0,
        image_height: 512.0,
        num_objects: 20,
        num_categories: 4,
        size_mix: vec![BucketMix {
            weight: 1.0,
            min_area: 100.0,
            max_area: 5000.0,
        }],
        seed: 11,
    };
    let scenes = generate_dataset(&spec, 3).unwrap();
    let gts: Vec<_> = scenes.iter().flatten().copied().collect();
    let dets = detections_from_ground_truth(&gts);
    let report = evaluate(&gts, &dets, &EvalParams::new(SizeBucketScheme::soda_d())).unwrap();
    assert_eq!(report.ap, 1.0);
}
