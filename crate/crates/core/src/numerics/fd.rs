use super::{GradientSet, ParamSet};
use crate::error::{invalid, Error, Result};

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
///
/// Costs `2 · params.num_values()` evaluations of `f`.
pub fn finite_difference_gradient<F>(mut f: F, params: &ParamSet, eps: f64) -> Result<GradientSet>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(invalid(format!("eps must be positive, got {eps}")));
    }
    let base = params.flatten();
    let mut grad = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        let plus = f(&params.unflatten(&probe)?)?;
        probe[i] = base[i] - eps;
        let minus = f(&params.unflatten(&probe)?)?;
        probe[i] = base[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_difference_gradient",
            });
        }
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    params.unflatten(&grad)
}
