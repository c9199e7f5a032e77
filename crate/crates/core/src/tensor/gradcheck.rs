//! Central-difference gradient checking.

use serde::Serialize;

use super::{Matrix, TensorError};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Worst-case disagreement between an analytic gradient and central
/// differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub param_count: usize,
}

/// Compares `analytic` against `(f(p + eps) - f(p - eps)) / (2 eps)` for every
/// coordinate of `params`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<GradReport, TensorError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(TensorError::InvalidStep(eps));
    }
    if params.len() != analytic.len() {
        return Err(TensorError::GradientLength {
            params: params.len(),
            grads: analytic.len(),
        });
    }
    let mut point = params.to_vec();
    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        param_count: params.len(),
    };
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = f(&point);
        point[i] = orig - eps;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::NonFiniteObjective { index: i });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let abs = (numeric - analytic[i]).abs();
        let denom = numeric.abs().max(analytic[i].abs()).max(REL_ERR_FLOOR);
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(abs / denom);
    }
    Ok(report)
}

/// Concatenates the row-major data of several matrices.
pub fn flatten(tensors: &[&Matrix]) -> Vec<f64> {
    tensors.iter().flat_map(|m| m.data().iter().copied()).collect()
}

/// Inverse of [`flatten`]: overwrites the tensors in order from `values`.
pub fn unflatten_into(tensors: &mut [&mut Matrix], values: &[f64]) {
    let mut offset = 0;
    for t in tensors.iter_mut() {
        let n = t.data().len();
        t.data_mut().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, values.len(), "flat vector length does not match tensors");
}
