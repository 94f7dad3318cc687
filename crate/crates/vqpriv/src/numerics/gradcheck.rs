//! Central-difference gradient oracle.
//!
//! Lives in the library (not test code) because every module with an analytic
//! backward pass checks itself against it, and the acceptance suite does too.

use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `x`:
/// `g[i] = (f(x + eps*e_i) - f(x - eps*e_i)) / (2 * eps)`.
///
/// `f` is evaluated at `2 * x.len()` probe points; a non-finite value at any
/// probe is an oracle failure, not a silent NaN.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::config(format!("finite_diff_grad eps must be > 0, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure {
                detail: format!("non-finite probe at coordinate {i}: f+ = {plus}, f- = {minus}"),
            });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Largest elementwise relative disagreement between two gradients, with the
/// denominator floored at 1e-6 so matching near-zero components compare as
/// equal instead of blowing up.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
