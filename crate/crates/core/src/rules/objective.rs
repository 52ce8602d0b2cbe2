use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{invalid, Result};
use crate::neurons::{Model, OutputMode, RecordedForward, RecurrentNet};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CategoricalCrossentropy,
    /// Mean over batch and classes of `(logit − one_hot)²`.
    Mse,
}

/// Penalty `coef · Σ_j (rate_j − target_hz)²` on per-neuron firing rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiringRateRegularizer {
    pub target_hz: f64,
    pub coef: f64,
}

impl FiringRateRegularizer {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_hz >= 0.0 && self.coef >= 0.0) {
            return Err(invalid("firing-rate target and coefficient must be non-negative"));
        }
        Ok(())
    }

    /// Per-neuron scale `2·coef·(rate_j − target)/(B·T·dt)`: the derivative of
    /// the penalty with respect to any single spike of neuron `j`.
    pub fn spike_gradient_scale(&self, spikes: &Tensor, dt: f64) -> Result<Tensor> {
        let (b, t, _) = crate::neurons::dims3(spikes)?;
        let rates = neuron_rates(spikes, dt)?;
        let denom = (b * t) as f64 * dt;
        rates.map_checked("rate gradient", |r| 2.0 * self.coef * (r - self.target_hz) / denom)
    }
}

/// Per-neuron mean rate in Hz for spikes `[batch × T × n]`.
pub fn neuron_rates(spikes: &Tensor, dt: f64) -> Result<Tensor> {
    let (b, t, _) = crate::neurons::dims3(spikes)?;
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    spikes
        .sum_axis(0)?
        .sum_axis(0)?
        .scale(1.0 / ((b * t) as f64 * dt))
}

/// Penalty value and its gradient with respect to every spike `[batch × T × n]`.
pub fn firing_rate_regularizer(spikes: &Tensor, target_hz: f64, dt: f64, coef: f64) -> Result<(f64, Tensor)> {
    let reg = FiringRateRegularizer { target_hz, coef };
    reg.validate()?;
    let rates = neuron_rates(spikes, dt)?;
    let value = coef * rates.data().iter().map(|r| (r - target_hz).powi(2)).sum::<f64>();
    let scale = reg.spike_gradient_scale(spikes, dt)?;
    let (b, t, n) = crate::neurons::dims3(spikes)?;
    let grad = scale.expand_rows(b * t)?.reshape(&[b, t, n])?;
    Ok((value, grad))
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(invalid(format!("{} labels for {rows} predictions", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut d = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        d[r * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], d)
}

/// Task loss plus optional firing-rate penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Objective {
    pub loss: LossKind,
    pub rate_reg: Option<FiringRateRegularizer>,
}

impl Objective {
    pub fn new(loss: LossKind) -> Self {
        Self { loss, rate_reg: None }
    }

    pub fn with_rate_reg(mut self, reg: FiringRateRegularizer) -> Self {
        self.rate_reg = Some(reg);
        self
    }

    pub fn check_model(&self, model: &Model) -> Result<()> {
        if let Some(reg) = &self.rate_reg {
            reg.validate()?;
            if model.as_recurrent().is_none() {
                return Err(invalid("the firing-rate regularizer needs a spiking model"));
            }
        }
        Ok(())
    }

    /// Mean task loss over rows and its gradient with respect to `logits`.
    pub fn logit_loss(&self, logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        if logits.rank() != 2 {
            return Err(invalid(format!("logits must be [batch × classes], got {:?}", logits.shape())));
        }
        let (rows, classes) = (logits.rows(), logits.cols());
        check_labels(labels, rows, classes)?;
        let target = one_hot(labels, classes)?;
        match self.loss {
            LossKind::CategoricalCrossentropy => {
                let logp = logits.log_softmax()?;
                let loss = -logp.mul(&target)?.sum() / rows as f64;
                let grad = logits.softmax()?.sub(&target)?.scale(1.0 / rows as f64)?;
                Ok((loss, grad))
            }
            LossKind::Mse => {
                let diff = logits.sub(&target)?;
                let n = (rows * classes) as f64;
                Ok((diff.square()?.sum() / n, diff.scale(2.0 / n)?))
            }
        }
    }

    /// Task loss of a recurrent run and `dLoss/dy[t]` for every step.
    pub fn output_gradients(
        &self,
        net: &RecurrentNet,
        outputs: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, Vec<Tensor>)> {
        let (b, t_len, c) = crate::neurons::dims3(outputs)?;
        let logits = net.logits_from_outputs(outputs)?;
        let (loss, g) = self.logit_loss(&logits, labels)?;
        let grads = match net.output_mode {
            OutputMode::EveryStep => {
                let per_step = g.scale(1.0 / t_len as f64)?;
                vec![per_step; t_len]
            }
            OutputMode::FinalStep => {
                let mut v = vec![Tensor::zeros(&[b, c]); t_len];
                v[t_len - 1] = g;
                v
            }
        };
        Ok((loss, grads))
    }

    /// Plain evaluation: total loss (task plus penalty) on `batch`.
    pub fn loss(&self, model: &Model, batch: &Batch) -> Result<f64> {
        self.check_model(model)?;
        let fwd = model.forward(&batch.inputs)?;
        let (mut loss, _) = self.logit_loss(&fwd.logits, &batch.labels)?;
        if let (Some(reg), Some(spikes), Some(dt)) = (&self.rate_reg, &fwd.spikes, model.dt()) {
            loss += firing_rate_regularizer(spikes, reg.target_hz, dt, reg.coef)?.0;
        }
        if !loss.is_finite() {
            return Err(crate::Error::NonFinite { op: "loss" });
        }
        Ok(loss)
    }

    /// Records the forward pass and the loss on `tape`.
    pub fn record(&self, tape: &mut Tape, model: &Model, batch: &Batch) -> Result<Var> {
        self.check_model(model)?;
        let rec = model.record(tape, &batch.inputs)?;
        let (logits, spikes) = match (&rec, model) {
            (RecordedForward::Mlp { logits }, _) => (*logits, None),
            (RecordedForward::Recurrent(run), Model::Recurrent(net)) => {
                let t_len = run.outputs.len();
                let logits = match net.output_mode {
                    OutputMode::EveryStep => {
                        let mut acc = run.outputs[0];
                        for &y in &run.outputs[1..] {
                            acc = tape.add(acc, y)?;
                        }
                        tape.scale(acc, 1.0 / t_len as f64)?
                    }
                    OutputMode::FinalStep => run.outputs[t_len - 1],
                };
                (logits, Some((run, net.dt)))
            }
            _ => return Err(invalid("recorded run does not match the model")),
        };
        let mut loss = match self.loss {
            LossKind::CategoricalCrossentropy => tape.softmax_cross_entropy(logits, &batch.labels)?,
            LossKind::Mse => {
                let value = tape.value(logits)?;
                check_labels(&batch.labels, value.rows(), value.cols())?;
                let target = tape.constant(one_hot(&batch.labels, value.cols())?)?;
                let diff = tape.sub(logits, target)?;
                let sq = tape.square(diff)?;
                tape.mean(sq)?
            }
        };
        if let (Some(reg), Some((run, dt))) = (&self.rate_reg, spikes) {
            let t_len = run.spikes.len();
            let b = batch.labels.len();
            let mut acc = run.spikes[0];
            for &z in &run.spikes[1..] {
                acc = tape.add(acc, z)?;
            }
            let per_neuron = tape.sum_axis(acc, 0)?;
            let rates = tape.scale(per_neuron, 1.0 / ((b * t_len) as f64 * dt))?;
            let dev = tape.add_scalar(rates, -reg.target_hz)?;
            let sq = tape.square(dev)?;
            let total = tape.sum(sq)?;
            let penalty = tape.scale(total, reg.coef)?;
            loss = tape.add(loss, penalty)?;
        }
        Ok(loss)
    }
}
