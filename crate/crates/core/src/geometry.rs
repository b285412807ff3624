//! Axis-aligned boxes and the overlap measures built on them.
//!
//! Boxes are stored as top-left corner plus size in pixel units; the
//! center form exists only as a conversion helper. Containment uses the
//! closed-box convention: boundary points count as inside, which keeps
//! the inside/outside partition of sampling points deterministic at
//! edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle: top-left corner `(x, y)`, extent `(w, h)`.
///
/// `w` and `h` are strictly positive; degenerate boxes are rejected at
/// construction so every area and ratio downstream is well defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from its center and extent.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    /// Intersection area with another box; zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        ix * iy
    }

    /// Intersection over union. Symmetric, in `[0, 1]`, zero for disjoint
    /// boxes and one exactly for identical boxes (the `(x+w)-x` corner
    /// arithmetic would otherwise leak rounding into the identity case).
    pub fn iou(&self, other: &BBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        inter / union
    }

    /// Area ratio `area(self) / area(gt)`; 1 means scale-matched.
    pub fn area_ratio(&self, gt: &BBox) -> f64 {
        self.area() / gt.area()
    }

    /// Closed-box containment: boundary points are inside.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Scales the box about its center by `eta >= 1` per axis.
    pub fn expand(&self, eta: f64) -> Result<BBox> {
        if !(eta >= 1.0) {
            return Err(Error::out_of_domain("eta", ">= 1", eta));
        }
        let (cx, cy) = self.center();
        BBox::from_center(cx, cy, eta * self.w, eta * self.h)
    }
}

/// A 2-D reference point with both coordinates in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    px: f64,
    py: f64,
}

impl NormalizedPoint {
    pub fn new(px: f64, py: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&px) {
            return Err(Error::out_of_domain("px", "in [0, 1]", px));
        }
        if !(0.0..=1.0).contains(&py) {
            return Err(Error::out_of_domain("py", "in [0, 1]", py));
        }
        Ok(Self { px, py })
    }

    #[inline]
    pub fn px(&self) -> f64 {
        self.px
    }

    #[inline]
    pub fn py(&self) -> f64 {
        self.py
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn construction_rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BBox::new(f64::INFINITY, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn iou_identity_is_one() {
        let b = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(b.iou(&b), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(bb(0.0, 0.0, 1.0, 1.0).iou(&bb(5.0, 5.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // inter 2, union 6
        let v = bb(0.0, 0.0, 2.0, 2.0).iou(&bb(1.0, 0.0, 2.0, 2.0));
        assert_relative_eq!(v, 1.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn area_ratio_examples() {
        let b = bb(3.0, 4.0, 5.0, 6.0);
        assert_eq!(b.area_ratio(&b), 1.0);
        assert_eq!(bb(0.0, 0.0, 2.0, 2.0).area_ratio(&bb(0.0, 0.0, 1.0, 1.0)), 4.0);
        assert_eq!(
            bb(0.0, 0.0, 1.0, 1.0).area_ratio(&bb(0.0, 0.0, 2.0, 2.0)),
            0.25
        );
    }

    #[test]
    fn contains_uses_closed_box() {
        let b = bb(0.0, 0.0, 2.0, 2.0);
        assert!(b.contains(1.0, 1.0));
        assert!(b.contains(2.0, 2.0)); // boundary counts as inside
        assert!(b.contains(0.0, 0.0));
        assert!(!b.contains(3.0, 1.0));
        assert!(!b.contains(1.0, -0.001));
    }

    #[test]
    fn expand_examples() {
        let b = bb(0.5, 1.5, 2.0, 3.0);
        assert_eq!(b.expand(1.0).unwrap(), b);
        assert_eq!(
            bb(0.0, 0.0, 2.0, 2.0).expand(2.0).unwrap(),
            bb(-1.0, -1.0, 4.0, 4.0)
        );
        assert_eq!(
            bb(1.0, 1.0, 1.0, 1.0).expand(1.5).unwrap(),
            bb(0.75, 0.75, 1.5, 1.5)
        );
        assert!(b.expand(0.99).is_err());
    }

    #[test]
    fn normalized_point_domain() {
        assert!(NormalizedPoint::new(0.0, 1.0).is_ok());
        assert!(NormalizedPoint::new(-0.01, 0.5).is_err());
        assert!(NormalizedPoint::new(0.5, 1.01).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (
            -1000.0..1000.0f64,
            -1000.0..1000.0f64,
            0.1..500.0f64,
            0.1..500.0f64,
        )
            .prop_map(|(x, y, w, h)| bb(x, y, w, h))
    }

    /// Boxes on a coarse dyadic grid: all arithmetic below 2^53 stays exact,
    /// so center preservation can be asserted with zero tolerance.
    fn dyadic_box() -> impl Strategy<Value = BBox> {
        (0u32..65536, 0u32..65536, 1u32..32768, 1u32..32768).prop_map(|(x, y, w, h)| {
            bb(
                x as f64 / 64.0,
                y as f64 / 64.0,
                w as f64 / 64.0,
                h as f64 / 64.0,
            )
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = a.iou(&b);
            let ba = b.iou(&a);
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn area_ratio_reciprocal(a in arb_box(), b in arb_box()) {
            let prod = a.area_ratio(&b) * b.area_ratio(&a);
            prop_assert!((prod - 1.0).abs() < 1e-12);
        }

        #[test]
        fn expand_preserves_center_exactly_on_dyadic_grid(
            b in dyadic_box(),
            eta_halves in 2u32..8,
        ) {
            let eta = eta_halves as f64 / 2.0;
            let e = b.expand(eta).unwrap();
            prop_assert_eq!(e.center(), b.center());
            prop_assert_eq!(e.w, eta * b.w);
            prop_assert_eq!(e.h, eta * b.h);
        }

        #[test]
        fn expand_preserves_center_to_rounding(b in arb_box(), eta in 1.0..4.0f64) {
            let e = b.expand(eta).unwrap();
            let (cx, cy) = b.center();
            let (ex, ey) = e.center();
            let tol = |c: f64| 4.0 * f64::EPSILON * c.abs().max(e.w.max(e.h));
            prop_assert!((ex - cx).abs() <= tol(cx));
            prop_assert!((ey - cy).abs() <= tol(cy));
        }

        #[test]
        fn iou_one_only_for_identical(a in arb_box(), b in arb_box()) {
            if a.iou(&b) == 1.0 {
                prop_assert_eq!(a, b);
            }
        }
    }
}
