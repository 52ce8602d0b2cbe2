use super::objective::Objective;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::neurons::{Model, W_REC};
use crate::numerics::{GradientSet, Tape};

/// Clears the gradient of the (structurally absent) recurrent self-connections.
pub(crate) fn mask_self_loops(grads: &mut GradientSet) -> Result<()> {
    if let Some(g) = grads.get_mut(W_REC) {
        g.zero_diagonal()?;
    }
    Ok(())
}

/// Exact reverse-mode gradients of the batch-mean loss; returns `(loss, grads)`.
pub fn bptt_gradients(model: &Model, batch: &Batch, objective: &Objective) -> Result<(f64, GradientSet)> {
    let mut tape = Tape::begin();
    let loss = objective.record(&mut tape, model, batch)?;
    let value = tape.value(loss)?.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    let mut grads = tape.backward(loss)?;
    mask_self_loops(&mut grads)?;
    Ok((value, grads))
}
