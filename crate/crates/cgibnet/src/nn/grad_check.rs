//! Finite-difference gradient checker.
//!
//! Central differences with h = 1e-5 against an analytic gradient, in double
//! precision. Used as the oracle for every shipped architecture and for the
//! full training losses.

use crate::{CgibError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub pass: bool,
}

const FD_STEP: f64 = 1e-5;

/// Compare `analytic` against central finite differences of `f` at `theta`.
///
/// Relative error per coordinate is |a - n| / max(1, |a| + |n|), so
/// near-zero gradients are compared absolutely. Errors out if `f` produces
/// a non-finite value anywhere on the stencil.
pub fn grad_check(
    theta: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    tolerance: f64,
) -> Result<GradCheckReport> {
    assert_eq!(theta.len(), analytic.len());
    let mut work = theta.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut worst = 0;
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + FD_STEP;
        let up = f(&work);
        work[i] = orig - FD_STEP;
        let down = f(&work);
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(CgibError::numerical(format!(
                "non-finite loss while probing parameter {i}: f+ = {up}, f- = {down}"
            )));
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[i];
        if !a.is_finite() {
            return Err(CgibError::numerical(format!("non-finite analytic gradient at {i}")));
        }
        let abs = (a - numeric).abs();
        let rel = abs / f64::max(1.0, a.abs() + numeric.abs());
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
        max_abs = max_abs.max(abs);
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        worst_index: worst,
        checked: theta.len(),
        pass: max_rel < tolerance,
    })
}
