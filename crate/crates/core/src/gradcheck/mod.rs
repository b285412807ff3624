//! Central finite-difference verification of analytic gradients.
//!
//! Every loss in the crate ships a hand-derived gradient; this module is
//! the independent referee. The step is relative (`h = eps * max(1, |x|)`)
//! and the relative error uses `max(|a|, |b|, 1e-8)` in the denominator so
//! near-zero gradients do not blow up the comparison.
//!
//! Samplers feeding [`check`] are responsible for staying away from kinks
//! (L1 corners, hinge boundaries, `u` in `{0, 1}`) by the configured
//! exclusion radius; at a kink the subgradient convention and the centered
//! stencil legitimately disagree.

pub mod suite;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par::prelude::*;

/// Finite-difference policy: relative step, pass tolerance, and the radius
/// samplers keep between evaluation points and non-smooth sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdSpec {
    pub eps: f64,
    pub tolerance: f64,
    pub kink_radius: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-3,
            kink_radius: 1e-4,
        }
    }
}

/// Central-difference gradient of a scalar function.
///
/// Errors with the offending coordinate if any evaluation is non-finite.
pub fn fd_gradient<F>(f: &F, x: &[f64], spec: &FdSpec) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    let partials: Vec<Result<f64>> = coords
        .par_iter()
        .map(|&i| {
            let h = spec.eps * x[i].abs().max(1.0);
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fp = f(&plus);
            let fm = f(&minus);
            if !fp.is_finite() {
                return Err(Error::NonFiniteEval { coord: i, value: fp });
            }
            if !fm.is_finite() {
                return Err(Error::NonFiniteEval { coord: i, value: fm });
            }
            Ok((fp - fm) / (2.0 * h))
        })
        .collect();
    partials.into_iter().collect()
}

/// Relative error with a floor that tolerates both-near-zero gradients.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// One sampled point whose analytic and numeric gradients disagreed.
#[derive(Debug, Clone, Serialize)]
pub struct FailingPoint {
    pub x: Vec<f64>,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of checking one gradient over many sampled points.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    pub max_rel_err: f64,
    pub passed: bool,
    pub failures: Vec<FailingPoint>,
}

/// Compares an analytic gradient against central differences over
/// `samples` points drawn by `sampler`. Passes iff the worst relative
/// error stays within `spec.tolerance`.
pub fn check<F, G, S>(
    name: &str,
    f: F,
    analytic_grad: G,
    samples: usize,
    mut sampler: S,
    spec: &FdSpec,
) -> Result<CheckReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64>,
    S: FnMut() -> Vec<f64>,
{
    let mut max_rel_err = 0.0f64;
    let mut failures = Vec::new();
    for _ in 0..samples {
        let x = sampler();
        let numeric = fd_gradient(&f, &x, spec)?;
        let analytic = analytic_grad(&x);
        assert_eq!(
            analytic.len(),
            numeric.len(),
            "analytic gradient dimension mismatch in {name}"
        );
        for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            let rel = relative_error(a, n);
            max_rel_err = max_rel_err.max(rel);
            if rel > spec.tolerance && failures.len() < 8 {
                failures.push(FailingPoint {
                    x: x.clone(),
                    coord: i,
                    analytic: a,
                    numeric: n,
                    rel_err: rel,
                });
            }
        }
    }
    let passed = max_rel_err <= spec.tolerance;
    Ok(CheckReport {
        name: name.to_string(),
        samples,
        max_rel_err,
        passed,
        failures,
    })
}
