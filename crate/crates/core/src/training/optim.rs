use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{GradientSet, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    /// `w ← w − g`, no learning rate.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn naive() -> Self {
        Self {
            kind: OptimizerKind::Naive,
            ..Self::adam(0.0)
        }
    }

    /// `lr = 0` is accepted so that a run can be frozen on purpose.
    pub fn validate(&self) -> Result<()> {
        if self.kind != OptimizerKind::Naive && !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if self.kind == OptimizerKind::Adam
            && !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return Err(invalid("adam needs beta1, beta2 in [0,1) and eps > 0"));
        }
        Ok(())
    }
}

/// Running first and second moments for Adam.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u32,
}

/// `w ← w − g`.
pub fn apply_naive(params: &ParamSet, grads: &GradientSet) -> Result<ParamSet> {
    params.add_scaled(grads, -1.0)
}

pub fn sgd_step(params: &ParamSet, grads: &GradientSet, lr: f64) -> Result<ParamSet> {
    params.add_scaled(grads, -lr)
}

fn adam_deltas(cfg: &OptimizerConfig, grads: &GradientSet, state: &mut AdamState) -> Result<GradientSet> {
    if state.t == 0 {
        state.m = grads.zeros_like();
        state.v = grads.zeros_like();
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let mut out = GradientSet::new();
    for (id, g) in grads {
        let m = state.m.get_mut(id).ok_or_else(|| crate::Error::UnknownParameter(id.clone()))?;
        *m = m.scale(b1)?.add(&g.scale(1.0 - b1)?)?;
        let m_hat = m.scale(1.0 / c1)?;
        let v = state.v.get_mut(id).ok_or_else(|| crate::Error::UnknownParameter(id.clone()))?;
        *v = v.scale(b2)?.add(&g.square()?.scale(1.0 - b2)?)?;
        let v_hat = v.scale(1.0 / c2)?;
        let d: Vec<f64> = m_hat
            .data()
            .iter()
            .zip(v_hat.data())
            .map(|(mh, vh)| -cfg.lr * mh / (vh.sqrt() + cfg.eps))
            .collect();
        out.insert(id.clone(), Tensor::new(g.shape().to_vec(), d)?);
    }
    Ok(out)
}

/// Bias-corrected Adam; updates `state` and returns the new parameters.
pub fn adam_step(params: &ParamSet, grads: &GradientSet, cfg: &OptimizerConfig, state: &mut AdamState) -> Result<ParamSet> {
    let d = adam_deltas(cfg, grads, state)?;
    params.add_scaled(&d, 1.0)
}

/// Stateful optimizer that turns gradients into weight deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    adam: AdamState,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            adam: AdamState::default(),
        })
    }

    /// The change to add to the parameters. For the naive optimizer this is
    /// exactly `−g`.
    pub fn deltas(&mut self, grads: &GradientSet) -> Result<GradientSet> {
        match self.cfg.kind {
            OptimizerKind::Naive => grads.scale(-1.0),
            OptimizerKind::Sgd => grads.scale(-self.cfg.lr),
            OptimizerKind::Adam => adam_deltas(&self.cfg, grads, &mut self.adam),
        }
    }
}
