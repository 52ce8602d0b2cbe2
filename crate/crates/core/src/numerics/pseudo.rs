use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PseudoKind {
    /// `gamma · max(0, 1 − |x| / v_th)`
    #[default]
    Triangular,
}

/// Surrogate derivative of the spike step function, used on backward passes
/// and in eligibility traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoDerivative {
    pub gamma: f64,
    pub kind: PseudoKind,
}

impl Default for PseudoDerivative {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            kind: PseudoKind::Triangular,
        }
    }
}

impl PseudoDerivative {
    pub fn triangular(gamma: f64) -> Self {
        Self {
            gamma,
            kind: PseudoKind::Triangular,
        }
    }

    /// Multiplier at distance `x` from threshold, normalised by `v_th`.
    #[inline]
    pub fn value(&self, x: f64, v_th: f64) -> f64 {
        match self.kind {
            PseudoKind::Triangular => self.gamma * (1.0 - (x / v_th).abs()).max(0.0),
        }
    }

    pub fn apply(&self, x: &Tensor, v_th: f64) -> Result<Tensor> {
        check_threshold(v_th)?;
        x.map_checked("pseudo_derivative", |v| self.value(v, v_th))
    }
}

pub(crate) fn check_threshold(v_th: f64) -> Result<()> {
    if !(v_th > 0.0 && v_th.is_finite()) {
        return Err(invalid(format!("threshold must be positive, got {v_th}")));
    }
    Ok(())
}

/// Exact step `H(x ≥ 0)` together with its pseudo-derivative multiplier.
pub fn heaviside_with_pseudo(
    v_minus_thresh: &Tensor,
    pd: &PseudoDerivative,
    v_th: f64,
) -> Result<(Tensor, Tensor)> {
    check_threshold(v_th)?;
    let spikes = v_minus_thresh.map_checked("heaviside", |x| if x >= 0.0 { 1.0 } else { 0.0 })?;
    let psi = pd.apply(v_minus_thresh, v_th)?;
    Ok((spikes, psi))
}
