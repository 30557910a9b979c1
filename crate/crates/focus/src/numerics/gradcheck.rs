//! Central finite-difference verification of analytic gradients.

use super::tensor::Tensor;
use super::NumericsError;

/// Compare analytic gradients against central differences of `f`.
///
/// `f` is evaluated at perturbed copies of `params` (restored afterwards);
/// it must be deterministic. Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &mut [Tensor],
    analytic: &[Tensor],
    eps: f64,
) -> Result<f64, NumericsError>
where
    F: FnMut(&[Tensor]) -> f64,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::ShapeMismatch(format!(
            "finite_diff_check: eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "finite_diff_check: {} params vs {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        if params[p].shape() != analytic[p].shape() {
            return Err(NumericsError::ShapeMismatch(format!(
                "finite_diff_check: param shape {:?} vs gradient shape {:?}",
                params[p].shape(),
                analytic[p].shape()
            )));
        }
        for j in 0..params[p].numel() {
            let original = params[p].data()[j];
            params[p].data_mut()[j] = original + eps;
            let plus = f(params);
            params[p].data_mut()[j] = original - eps;
            let minus = f(params);
            params[p].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
