//! Greedy score-ordered matching of detections to ground truth.

use crate::geometry::BBox;

/// Matches detections of one image and category to ground truth.
///
/// Detections are processed in descending score order (ties keep input
/// order); each is matched to the unmatched ground truth with the highest
/// IoU at or above the threshold, ties broken by the lowest ground-truth
/// index. Returns, in input detection order, the matched ground-truth
/// index or `None`.
pub fn match_detections(
    gts: &[BBox],
    dets: &[(BBox, f64)],
    iou_threshold: f64,
) -> Vec<Option<usize>> {
    let order = score_order(dets);
    let mut gt_taken = vec![false; gts.len()];
    let mut matches = vec![None; dets.len()];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let iou = dets[d].0.iou(gt);
            if iou < iou_threshold {
                continue;
            }
            // Strict improvement keeps the lowest index on IoU ties.
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            gt_taken[g] = true;
            matches[d] = Some(g);
        }
    }
    matches
}

/// Detection indices in descending score order, stable for equal scores.
pub(crate) fn score_order(dets: &[(BBox, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap());
    order
}

/// Match outcome of one detection under the COCO ignore convention.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IgnoreAwareMatch {
    pub score: f64,
    /// Matched a counted (non-ignored) ground truth.
    pub true_positive: bool,
    /// Neither credited nor penalized: matched an ignored ground truth,
    /// or unmatched with an out-of-range area of its own.
    pub ignored: bool,
}

/// Greedy matcher used by the evaluator: ground truths flagged as ignored
/// can only be matched when no counted ground truth qualifies, and
/// detections that end up on ignored ground truth (or unmatched with
/// `det_ignore` set) are excluded from the precision-recall counts.
pub(crate) fn match_with_ignore(
    gts: &[BBox],
    gt_ignore: &[bool],
    dets: &[(BBox, f64)],
    det_ignore: &[bool],
    iou_threshold: f64,
) -> Vec<IgnoreAwareMatch> {
    debug_assert_eq!(gts.len(), gt_ignore.len());
    debug_assert_eq!(dets.len(), det_ignore.len());

    // Counted ground truths first, preserving index order inside each
    // group, mirroring the standard evaluator's stable sort on the
    // ignore flag.
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| gt_ignore[g]);

    let order = score_order(dets);
    let mut gt_taken = vec![false; gts.len()];
    let mut out = vec![
        IgnoreAwareMatch {
            score: 0.0,
            true_positive: false,
            ignored: false,
        };
        dets.len()
    ];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for &g in &gt_order {
            if gt_taken[g] {
                continue;
            }
            // Once a counted candidate is held, ignored ground truth can
            // no longer displace it.
            if let Some((bg, _)) = best {
                if gt_ignore[g] && !gt_ignore[bg] {
                    break;
                }
            }
            let iou = dets[d].0.iou(&gts[g]);
            if iou < iou_threshold {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let (tp, ignored) = match best {
            Some((g, _)) => {
                gt_taken[g] = true;
                (!gt_ignore[g], gt_ignore[g])
            }
            None => (false, det_ignore[d]),
        };
        out[d] = IgnoreAwareMatch {
            score: dets[d].1,
            true_positive: tp,
            ignored,
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn single_pair_above_threshold_matches() {
        let gts = [bb(0.0, 0.0, 10.0, 10.0)];
        let dets = [(bb(0.0, 2.5, 10.0, 10.0), 0.9)]; // IoU 0.6
        assert_eq!(match_detections(&gts, &dets, 0.5), vec![Some(0)]);
        assert_eq!(match_detections(&gts, &dets, 0.65), vec![None]);
    }

    #[test]
    fn two_detections_one_ground_truth_keeps_higher_score() {
        let gts = [bb(0.0, 0.0, 10.0, 10.0)];
        let dets = [
            (bb(0.5, 0.5, 10.0, 10.0), 0.3),
            (bb(1.0, 1.0, 10.0, 10.0), 0.8),
        ];
        assert_eq!(match_detections(&gts, &dets, 0.5), vec![None, Some(0)]);
    }

    #[test]
    fn equal_scores_keep_input_order() {
        let gts = [bb(0.0, 0.0, 10.0, 10.0)];
        let dets = [
            (bb(0.5, 0.5, 10.0, 10.0), 0.7),
            (bb(0.2, 0.2, 10.0, 10.0), 0.7),
        ];
        // First in input order wins the single ground truth.
        assert_eq!(match_detections(&gts, &dets, 0.5), vec![Some(0), None]);
    }

    #[test]
    fn iou_ties_break_to_lowest_gt_index() {
        // Two identical ground truths; the detection overlaps both
        // equally and must take index 0.
        let gts = [bb(0.0, 0.0, 4.0, 4.0), bb(0.0, 0.0, 4.0, 4.0)];
        let dets = [(bb(1.0, 0.0, 4.0, 4.0), 0.9)];
        assert_eq!(match_detections(&gts, &dets, 0.3), vec![Some(0)]);
    }

    #[test]
    fn matching_is_one_to_one() {
        let gts = [
            bb(0.0, 0.0, 4.0, 4.0),
            bb(10.0, 0.0, 4.0, 4.0),
            bb(20.0, 0.0, 4.0, 4.0),
        ];
        let dets = [
            (bb(0.5, 0.0, 4.0, 4.0), 0.9),
            (bb(0.6, 0.0, 4.0, 4.0), 0.8),
            (bb(10.2, 0.0, 4.0, 4.0), 0.7),
            (bb(20.1, 0.0, 4.0, 4.0), 0.95),
        ];
        let m = match_detections(&gts, &dets, 0.3);
        let mut seen = std::collections::HashSet::new();
        for g in m.into_iter().flatten() {
            assert!(seen.insert(g), "ground truth matched twice");
        }
    }

    #[test]
    fn ignored_gt_only_matches_as_fallback() {
        let gts = [bb(0.0, 0.0, 10.0, 10.0), bb(1.0, 1.0, 10.0, 10.0)];
        // First gt ignored; detection overlaps both well.
        let dets = [(bb(0.5, 0.5, 10.0, 10.0), 0.9)];
        let m = match_with_ignore(&gts, &[true, false], &dets, &[false], 0.5);
        assert!(m[0].true_positive, "must prefer the counted ground truth");
        assert!(!m[0].ignored);

        // With both ignored, the match is ignored, not a false positive.
        let m = match_with_ignore(&gts, &[true, true], &dets, &[false], 0.5);
        assert!(!m[0].true_positive);
        assert!(m[0].ignored);
    }

    #[test]
    fn unmatched_out_of_range_detection_is_ignored() {
        let gts = [bb(0.0, 0.0, 10.0, 10.0)];
        let dets = [(bb(50.0, 50.0, 3.0, 3.0), 0.9)];
        let m = match_with_ignore(&gts, &[false], &dets, &[true], 0.5);
        assert!(!m[0].true_positive);
        assert!(m[0].ignored);
        // Same detection with det_ignore unset is a plain false positive.
        let m = match_with_ignore(&gts, &[false], &dets, &[false], 0.5);
        assert!(!m[0].true_positive);
        assert!(!m[0].ignored);
    }
}
