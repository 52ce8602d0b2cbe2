use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{GradientSet, ParamSet, Tensor};

/// Fixed-magnitude sign update, optionally with conductance bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManhattanConfig {
    pub delta: f64,
    #[serde(default)]
    pub g_min: Option<f64>,
    #[serde(default)]
    pub g_max: Option<f64>,
}

impl ManhattanConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            g_min: None,
            g_max: None,
        }
    }

    pub fn bounded(delta: f64, g_min: f64, g_max: f64) -> Self {
        Self {
            delta,
            g_min: Some(g_min),
            g_max: Some(g_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid(format!("delta must be positive, got {}", self.delta)));
        }
        match (self.g_min, self.g_max) {
            (Some(lo), Some(hi)) if !(lo < hi) => {
                Err(invalid(format!("bounds must satisfy g_min < g_max, got [{lo}, {hi}]")))
            }
            (Some(_), None) | (None, Some(_)) => Err(invalid("give both g_min and g_max or neither")),
            _ => Ok(()),
        }
    }

    fn clamp(&self, w: f64) -> f64 {
        match (self.g_min, self.g_max) {
            (Some(lo), Some(hi)) => w.clamp(lo, hi),
            _ => w,
        }
    }

    /// Clips every weight into the bounds (identity when unbounded).
    pub fn project(&self, weights: &ParamSet) -> Result<ParamSet> {
        weights.map(|_, w| w.map_checked("manhattan project", |v| self.clamp(v)))
    }
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weight deltas `−delta·sign(grad)`; with bounds, chosen so that
/// `weights + Δ` lies in `[g_min, g_max]`.
pub fn manhattan_update(grads: &GradientSet, weights: &ParamSet, cfg: &ManhattanConfig) -> Result<GradientSet> {
    cfg.validate()?;
    if !grads.same_keys(weights) {
        return Err(invalid("gradients and weights have different parameter ids"));
    }
    let mut out = GradientSet::new();
    for (id, g) in grads {
        let w = weights.require(id)?;
        if w.shape() != g.shape() {
            return Err(crate::Error::Shape {
                op: "manhattan_update",
                left: w.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let d: Vec<f64> = g
            .data()
            .iter()
            .zip(w.data())
            .map(|(&gv, &wv)| {
                let step = -cfg.delta * sign(gv);
                let target = cfg.clamp(wv + step);
                if target == wv + step {
                    step
                } else {
                    target - wv
                }
            })
            .collect();
        out.insert(id.clone(), Tensor::new(g.shape().to_vec(), d)?);
    }
    Ok(out)
}
