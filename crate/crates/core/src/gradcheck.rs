//! Central finite differences for checking analytic gradients.

use crate::error::Result;
use crate::matrix::Matrix;

/// Default probe step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitude below which gradient entries are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `(f(x + h e_k) − f(x − h e_k)) / 2h` for every entry `k` of `x`.
pub fn central_difference<F>(x: &Matrix, step: f64, mut f: F) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let plus = f(&probe)?;
        probe.as_mut_slice()[k] = orig - step;
        let minus = f(&probe)?;
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
    }
    Ok(out)
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Largest entry-wise [`relative_error`] between two gradients.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
