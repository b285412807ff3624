//! Scale-aligned confidence targets.
//!
//! Small boxes can share an IoU yet differ badly in predicted scale, so
//! the classification target folds the box-area ratio in alongside IoU:
//!
//! ```text
//! r = sqrt(rho)            rho = area(pred) / area(gt)
//! v = exp(-theta (r-1)^2)  bounded scale score, 1 iff rho = 1
//! c = u^beta * v^(1-beta)  geometric blend with IoU u
//! t = c * s                target confidence given predicted score s
//! ```
//!
//! The square root concentrates values near 1, the exponential maps the
//! scale distance into (0, 1], and the geometric mean combines the two
//! measures without mixing their scales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyper-parameters of the confidence chain. Defaults are the ablation
/// optima: `beta = 0.73`, `theta = 6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTargetParams {
    pub beta: f64,
    pub theta: f64,
}

impl ScaleTargetParams {
    pub fn new(beta: f64, theta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::out_of_domain("beta", "in (0, 1)", beta));
        }
        if !(theta > 0.0) {
            return Err(Error::out_of_domain("theta", "> 0", theta));
        }
        Ok(Self { beta, theta })
    }
}

impl Default for ScaleTargetParams {
    fn default() -> Self {
        Self {
            beta: 0.73,
            theta: 6.0,
        }
    }
}

/// How the target confidence is formed from `c` and the predicted score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// `t = c * s` with the score treated as a detached constant.
    #[default]
    CTimesS,
    /// `t = c`, ignoring the predicted score.
    COnly,
}

/// Every intermediate of the confidence chain for one (pred, gt) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBreakdown {
    pub u: f64,
    pub rho: f64,
    pub r: f64,
    pub v: f64,
    pub c: f64,
    pub t: f64,
}

impl ConfidenceBreakdown {
    /// Computes the full chain from IoU `u`, area ratio `rho`, and the
    /// predicted score `s`.
    pub fn compute(
        u: f64,
        rho: f64,
        s: f64,
        params: &ScaleTargetParams,
        mode: TargetMode,
    ) -> Result<Self> {
        let c = confidence(u, rho, params)?;
        let r = rho.sqrt();
        let v = scale_score(rho, params.theta)?;
        let t = match mode {
            TargetMode::CTimesS => target_confidence(c, s),
            TargetMode::COnly => c,
        };
        Ok(Self { u, rho, r, v, c, t })
    }
}

/// Bounded scale score `v = exp(-theta (sqrt(rho) - 1)^2)`.
///
/// Maximized (= 1) exactly at `rho = 1` and strictly decreasing as
/// `sqrt(rho)` moves away from 1 in either direction.
pub fn scale_score(rho: f64, theta: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::out_of_domain("rho", "> 0", rho));
    }
    if !(theta > 0.0) {
        return Err(Error::out_of_domain("theta", "> 0", theta));
    }
    let d = rho.sqrt() - 1.0;
    Ok((-theta * d * d).exp())
}

/// Confidence `c = u^beta * v^(1-beta)`; zero iff `u` is zero.
pub fn confidence(u: f64, rho: f64, params: &ScaleTargetParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::out_of_domain("u", "in [0, 1]", u));
    }
    let v = scale_score(rho, params.theta)?;
    Ok(u.powf(params.beta) * v.powf(1.0 - params.beta))
}

/// Target confidence `t = c * s`.
pub fn target_confidence(c: f64, s: f64) -> f64 {
    c * s
}

/// Analytic partials `(dc/du, dc/drho)` of [`confidence`].
///
/// Defined on the open interior `u in (0, 1)`, `rho > 0`; at `u = 0` the
/// `u^beta` power has an unbounded derivative for `beta < 1`, so boundary
/// inputs are rejected.
pub fn confidence_grad(u: f64, rho: f64, params: &ScaleTargetParams) -> Result<(f64, f64)> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::out_of_domain("u", "in (0, 1)", u));
    }
    if !(rho > 0.0) {
        return Err(Error::out_of_domain("rho", "> 0", rho));
    }
    let beta = params.beta;
    let theta = params.theta;
    let r = rho.sqrt();
    let v = scale_score(rho, theta)?;
    let c = u.powf(beta) * v.powf(1.0 - beta);
    let dc_du = beta * u.powf(beta - 1.0) * v.powf(1.0 - beta);
    // dv/drho = -theta (r - 1) v / r, folded into c via the power chain.
    let dc_drho = -(1.0 - beta) * theta * (r - 1.0) / r * c;
    Ok((dc_du, dc_drho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_gradient, FdSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn params() -> ScaleTargetParams {
        ScaleTargetParams::default()
    }

    #[test]
    fn params_domain() {
        assert!(ScaleTargetParams::new(0.0, 6.0).is_err());
        assert!(ScaleTargetParams::new(1.0, 6.0).is_err());
        assert!(ScaleTargetParams::new(0.5, 0.0).is_err());
        assert!(ScaleTargetParams::new(0.5, 3.0).is_ok());
    }

    #[test]
    fn scale_score_is_one_at_matched_area() {
        for theta in [0.5, 1.5, 6.0, 9.0] {
            assert_eq!(scale_score(1.0, theta).unwrap(), 1.0);
        }
    }

    #[test]
    fn scale_score_frozen_values() {
        // exp(-6) and exp(-1.5), frozen from an independent high-precision
        // evaluation.
        assert_relative_eq!(
            scale_score(4.0, 6.0).unwrap(),
            2.4787521766663585e-3,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            scale_score(0.25, 6.0).unwrap(),
            0.22313016014842982,
            max_relative = 1e-12
        );
    }

    #[test]
    fn scale_score_rejects_nonpositive_rho() {
        assert!(scale_score(0.0, 6.0).is_err());
        assert!(scale_score(-1.0, 6.0).is_err());
    }

    #[test]
    fn confidence_trivial_and_frozen() {
        assert_eq!(confidence(1.0, 1.0, &params()).unwrap(), 1.0);
        assert_eq!(confidence(0.0, 1.0, &params()).unwrap(), 0.0);
        // 0.5^0.73, frozen from an independent high-precision evaluation.
        assert_relative_eq!(
            confidence(0.5, 1.0, &params()).unwrap(),
            0.6029039138453802,
            max_relative = 1e-12
        );
        assert!(confidence(1.2, 1.0, &params()).is_err());
        assert!(confidence(0.5, 0.0, &params()).is_err());
    }

    #[test]
    fn target_confidence_examples() {
        assert_eq!(target_confidence(1.0, 0.7), 0.7);
        assert_eq!(target_confidence(0.0, 0.9), 0.0);
        assert_relative_eq!(target_confidence(0.6, 0.5), 0.30, max_relative = 1e-15);
    }

    #[test]
    fn grad_examples() {
        // Stationary in rho at the matched-area point.
        let (_, dc_drho) = confidence_grad(0.5, 1.0, &params()).unwrap();
        assert_eq!(dc_drho, 0.0);
        // beta * u^(beta-1) at u = 0.5, rho = 1; frozen independently.
        let (dc_du, _) = confidence_grad(0.5, 1.0, &params()).unwrap();
        assert_relative_eq!(dc_du, 0.8802397142142551, max_relative = 1e-12);
        // Monotone increasing in u everywhere on the interior.
        for u in [0.05, 0.3, 0.7, 0.95] {
            let (g, _) = confidence_grad(u, 1.7, &params()).unwrap();
            assert!(g > 0.0);
        }
        assert!(confidence_grad(0.0, 1.0, &params()).is_err());
        assert!(confidence_grad(1.0, 1.0, &params()).is_err());
    }

    #[test]
    fn grad_matches_finite_differences_on_random_interior_points() {
        let p = params();
        let spec = FdSpec {
            eps: 1e-5,
            tolerance: 1e-4,
            kink_radius: 1e-4,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let u = rng.random_range(0.02..0.98);
            let rho = rng.random_range(0.1..6.0);
            let f = |x: &[f64]| confidence(x[0], x[1], &p).unwrap();
            let fd = fd_gradient(&f, &[u, rho], &spec).unwrap();
            let (du, drho) = confidence_grad(u, rho, &p).unwrap();
            for (a, n) in [(du, fd[0]), (drho, fd[1])] {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn breakdown_is_internally_consistent() {
        let b = ConfidenceBreakdown::compute(0.64, 2.25, 0.8, &params(), TargetMode::CTimesS)
            .unwrap();
        assert_relative_eq!(b.r, 1.5, max_relative = 1e-15);
        assert_relative_eq!(b.v, (-6.0f64 * 0.25).exp(), max_relative = 1e-12);
        assert_relative_eq!(
            b.c,
            0.64f64.powf(0.73) * b.v.powf(0.27),
            max_relative = 1e-12
        );
        assert_relative_eq!(b.t, b.c * 0.8, max_relative = 1e-15);

        let only_c =
            ConfidenceBreakdown::compute(0.64, 2.25, 0.8, &params(), TargetMode::COnly).unwrap();
        assert_eq!(only_c.t, only_c.c);
    }

    proptest! {
        #[test]
        fn confidence_increasing_in_u(u1 in 0.01..0.99f64, du in 0.001..0.2f64, rho in 0.05..10.0f64) {
            let u2 = (u1 + du).min(0.999);
            let c1 = confidence(u1, rho, &params()).unwrap();
            let c2 = confidence(u2, rho, &params()).unwrap();
            prop_assert!(c2 > c1);
        }

        #[test]
        fn confidence_peaks_at_matched_area(u in 0.05..1.0f64, rho in 0.05..10.0f64) {
            let at_one = confidence(u, 1.0, &params()).unwrap();
            let elsewhere = confidence(u, rho, &params()).unwrap();
            prop_assert!(elsewhere <= at_one);
            if (rho.sqrt() - 1.0).abs() > 1e-6 {
                prop_assert!(elsewhere < at_one);
            }
        }

        #[test]
        fn scale_score_symmetric_in_r_around_one(d in 0.0..0.99f64, theta in 0.5..9.0f64) {
            let hi = scale_score((1.0 + d) * (1.0 + d), theta).unwrap();
            let lo = scale_score((1.0 - d) * (1.0 - d), theta).unwrap();
            prop_assert!((hi - lo).abs() <= 1e-12 * hi.abs().max(1e-30));
        }

        #[test]
        fn v_is_one_iff_rho_is_one(rho in 0.01..16.0f64) {
            let v = scale_score(rho, 6.0).unwrap();
            if rho == 1.0 {
                prop_assert_eq!(v, 1.0);
            } else {
                prop_assert!(v < 1.0 || (rho.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}
