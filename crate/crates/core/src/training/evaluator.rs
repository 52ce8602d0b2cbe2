use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{invalid, Result};
use crate::neurons::{firing_rate, Model};
use crate::rules::{firing_rate_regularizer, Objective};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    FiringRate,
}

/// Loss and requested metrics on one batch or dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// Hz; `None` for non-spiking models.
    pub firing_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub objective: Objective,
    pub metrics: Vec<Metric>,
}

impl Evaluator {
    pub fn new(objective: Objective, metrics: &[Metric]) -> Self {
        Self {
            objective,
            metrics: metrics.to_vec(),
        }
    }

    fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    pub fn evaluate(&self, model: &Model, batch: &Batch) -> Result<Evaluation> {
        let fwd = model.forward(&batch.inputs)?;
        self.score(model, &fwd.logits, fwd.spikes.as_ref(), &batch.labels)
    }

    fn score(&self, model: &Model, logits: &Tensor, spikes: Option<&Tensor>, labels: &[usize]) -> Result<Evaluation> {
        let (mut loss, _) = self.objective.logit_loss(logits, labels)?;
        if let (Some(reg), Some(s), Some(dt)) = (&self.objective.rate_reg, spikes, model.dt()) {
            loss += firing_rate_regularizer(s, reg.target_hz, dt, reg.coef)?.0;
        }
        let accuracy = self.wants(Metric::Accuracy).then(|| accuracy(logits, labels));
        let rate = match (self.wants(Metric::FiringRate), spikes, model.dt()) {
            (true, Some(s), Some(dt)) => Some(firing_rate(s, dt)),
            _ => None,
        };
        Ok(Evaluation {
            loss,
            accuracy,
            firing_rate: rate,
        })
    }

    /// Example-weighted averages over the dataset, in order, `chunk` at a time.
    /// The penalty term is evaluated per chunk.
    pub fn evaluate_dataset(&self, model: &Model, data: &Dataset, chunk: usize) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(invalid("cannot evaluate an empty dataset"));
        }
        let mut total = Evaluation::default();
        let (mut acc, mut rate) = (0.0, 0.0);
        for batch in data.sequential_batches(chunk)? {
            let w = batch.len() as f64 / data.len() as f64;
            let e = self.evaluate(model, &batch)?;
            total.loss += w * e.loss;
            acc += w * e.accuracy.unwrap_or(0.0);
            rate += w * e.firing_rate.unwrap_or(0.0);
            total.firing_rate = e.firing_rate.map(|_| 0.0);
            total.accuracy = e.accuracy.map(|_| 0.0);
        }
        total.accuracy = total.accuracy.map(|_| acc);
        total.firing_rate = total.firing_rate.map(|_| rate);
        Ok(total)
    }
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neurons::{CellKind, RecurrentConfig, RecurrentNet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions() {
        let logits = Tensor::matrix(2, 2, vec![50.0, -50.0, -50.0, 50.0]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 1]), 1.0);
        let (loss, _) = Objective::default().logit_loss(&logits, &[0, 1]).unwrap();
        assert!(loss < 1e-40);
    }

    #[test]
    fn silent_network_rate_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::Recurrent(RecurrentNet::init(&RecurrentConfig::new(CellKind::Lif, 2, 4, 3), &mut rng).unwrap());
        let zeros = model.params().zeros_like();
        model.set_params(&zeros).unwrap();
        let ev = Evaluator::new(Objective::default(), &[Metric::Accuracy, Metric::FiringRate]);
        let batch = Batch {
            inputs: Tensor::ones(&[2, 5, 2]),
            labels: vec![0, 2],
        };
        let e = ev.evaluate(&model, &batch).unwrap();
        assert_eq!(e.firing_rate, Some(0.0));
        assert!((e.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::Recurrent(RecurrentNet::init(&RecurrentConfig::new(CellKind::Lif, 2, 4, 3), &mut rng).unwrap());
        let ev = Evaluator::new(Objective::default(), &[Metric::Accuracy]);
        let batch = Batch {
            inputs: Tensor::ones(&[1, 5, 2]),
            labels: vec![3],
        };
        assert!(ev.evaluate(&model, &batch).is_err());
    }
}
