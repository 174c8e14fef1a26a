//! Finite-difference gradient oracle.
//!
//! The check is deliberately independent of the analytic backward pass: it
//! only re-evaluates the scalar function at perturbed parameter vectors.

use crate::{Error, Result};

/// Compares `analytic` against central finite differences of `f` at `at`.
///
/// Returns the maximum over coordinates of
/// `|analytic_i - fd_i| / max(1, |fd_i|)`.
///
/// `f` receives the full flattened parameter vector and must return the
/// scalar objective; `h` is the central-difference step.
pub fn grad_check<F>(mut f: F, at: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if at.len() != analytic.len() {
        return Err(Error::InvalidArgument(format!(
            "grad_check: {} parameters but {} analytic gradient entries",
            at.len(),
            analytic.len()
        )));
    }
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "grad_check step h={h} outside [1e-6, 1e-4]"
        )));
    }
    let mut x = at.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check objective at coordinate {i}"
            )));
        }
        let fd = (fp - fm) / (2.0 * h);
        let rel = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
