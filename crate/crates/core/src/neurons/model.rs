use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::recurrent::{RecordedRun, RecurrentNet};
use crate::error::Result;
use crate::numerics::{GradientSet, ParamSet, Tape, Tensor, Var};

/// Any network a learning rule can be asked to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    Recurrent(RecurrentNet),
    Mlp(Mlp),
}

/// Result of a plain forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[batch × classes]`
    pub logits: Tensor,
    /// Per-step outputs `[batch × T × classes]` (recurrent models only).
    pub outputs: Option<Tensor>,
    /// `[batch × T × n_rec]` (recurrent models only).
    pub spikes: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub enum RecordedForward {
    Recurrent(RecordedRun),
    Mlp { logits: Var },
}

/// Flattens `[batch × T × D]` to `[batch × T·D]` for feed-forward models.
fn flat_input(x: &Tensor) -> Result<Tensor> {
    match *x.shape() {
        [b, t, d] => x.reshape(&[b, t * d]),
        _ => Ok(x.clone()),
    }
}

impl Model {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Recurrent(n) if n.cell.is_adaptive() => "alif",
            Model::Recurrent(_) => "lif",
            Model::Mlp(_) => "mlp",
        }
    }

    pub fn as_recurrent(&self) -> Option<&RecurrentNet> {
        match self {
            Model::Recurrent(n) => Some(n),
            Model::Mlp(_) => None,
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            Model::Recurrent(n) => n.n_out(),
            Model::Mlp(m) => m.n_out(),
        }
    }

    pub fn params(&self) -> ParamSet {
        match self {
            Model::Recurrent(n) => n.params(),
            Model::Mlp(m) => m.params(),
        }
    }

    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        match self {
            Model::Recurrent(n) => n.set_params(params),
            Model::Mlp(m) => m.set_params(params),
        }
    }

    /// `params ← params + deltas`.
    pub fn apply_deltas(&mut self, deltas: &GradientSet) -> Result<()> {
        let updated = self.params().add_scaled(deltas, 1.0)?;
        self.set_params(&updated)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        match self {
            Model::Recurrent(n) => {
                let u = n.unroll(x)?;
                Ok(Forward {
                    logits: n.logits_from_outputs(&u.outputs)?,
                    outputs: Some(u.outputs),
                    spikes: Some(u.spikes),
                })
            }
            Model::Mlp(m) => Ok(Forward {
                logits: m.forward(&flat_input(x)?)?,
                outputs: None,
                spikes: None,
            }),
        }
    }

    pub fn record(&self, tape: &mut Tape, x: &Tensor) -> Result<RecordedForward> {
        match self {
            Model::Recurrent(n) => n.record(tape, x).map(RecordedForward::Recurrent),
            Model::Mlp(m) => Ok(RecordedForward::Mlp {
                logits: m.record(tape, &flat_input(x)?)?,
            }),
        }
    }

    /// Simulation step in seconds, if the model has one.
    pub fn dt(&self) -> Option<f64> {
        self.as_recurrent().map(|n| n.dt)
    }
}
