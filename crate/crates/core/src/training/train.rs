use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluator::{Evaluation, Evaluator};
use super::optim::{Optimizer, OptimizerConfig};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::neurons::Model;
use crate::numerics::GradientSet;
use crate::rules::{LearningRule, RuleOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Chunk size for the end-of-epoch evaluation passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            eval_batch_size: 500,
        }
    }
}

/// Metrics after one epoch; `train` is measured on the whole training set in
/// a fixed order once the epoch's updates are done.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: Evaluation,
    pub validation: Option<Evaluation>,
    /// Mean of the per-batch losses seen during the epoch.
    pub mean_batch_loss: f64,
}

pub type History = Vec<EpochRecord>;

fn diverged(epoch: usize, step: usize, reason: impl Into<String>) -> Error {
    Error::Diverged {
        epoch,
        step,
        reason: reason.into(),
    }
}

/// The weight change a rule output asks for.
pub(crate) fn output_deltas(optimizer: &mut Optimizer, output: &RuleOutput) -> Result<GradientSet> {
    match output {
        RuleOutput::Gradients(g) => optimizer.deltas(g),
        RuleOutput::Deltas(d) => Ok(d.clone()),
    }
}

/// Adds `deltas` to the model within the rule's constraints; returns the
/// change actually made.
pub(crate) fn apply_deltas(model: &mut Model, rule: &dyn LearningRule, deltas: &GradientSet) -> Result<GradientSet> {
    let before = model.params();
    let after = rule.constrain(before.add_scaled(deltas, 1.0)?)?;
    model.set_params(&after)?;
    model.params().add_scaled(&before, -1.0)
}

/// As [`train`], appending to `history` as epochs finish so that a caller
/// keeps the completed epochs when a later one diverges.
#[allow(clippy::too_many_arguments)]
pub fn train_into(
    model: &mut Model,
    rule: &mut dyn LearningRule,
    evaluator: &Evaluator,
    data: &Dataset,
    validation: Option<&Dataset>,
    optimizer: &OptimizerConfig,
    cfg: &TrainConfig,
    history: &mut History,
) -> Result<()> {
    rule.supports(model)?;
    evaluator.objective.check_model(model)?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut opt = Optimizer::new(*optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rule.prepare(model, &mut rng)?;
    let start = rule.constrain(model.params())?;
    model.set_params(&start)?;

    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let batches = data.batch_indices(cfg.batch_size, &mut rng)?;
        for (step, idx) in batches.iter().enumerate() {
            let batch = data.gather(idx)?;
            let out = match rule.compute(model, &batch, &evaluator.objective) {
                Ok(o) => o,
                Err(Error::NonFinite { op }) => return Err(diverged(epoch, step, format!("non-finite {op}"))),
                Err(e) => return Err(e),
            };
            if !out.loss.is_finite() {
                return Err(diverged(epoch, step, "non-finite loss"));
            }
            loss_sum += out.loss;
            let applied = match output_deltas(&mut opt, &out.output).and_then(|d| apply_deltas(model, &*rule, &d)) {
                Ok(a) => a,
                Err(Error::NonFinite { op }) => return Err(diverged(epoch, step, format!("non-finite {op}"))),
                Err(e) => return Err(e),
            };
            rule.observe_applied(&applied)?;
        }
        let train = evaluator.evaluate_dataset(model, data, cfg.eval_batch_size)?;
        if !train.loss.is_finite() {
            return Err(diverged(epoch, batches.len(), "non-finite epoch loss"));
        }
        let validation = validation
            .map(|v| evaluator.evaluate_dataset(model, v, cfg.eval_batch_size))
            .transpose()?;
        history.push(EpochRecord {
            epoch,
            train,
            validation,
            mean_batch_loss: loss_sum / batches.len() as f64,
        });
    }
    Ok(())
}

/// Shuffled minibatch training for `cfg.epochs` epochs. Deterministic for a
/// fixed `cfg.seed`. Divergence aborts with the epoch and step.
pub fn train(
    model: &mut Model,
    rule: &mut dyn LearningRule,
    evaluator: &Evaluator,
    data: &Dataset,
    validation: Option<&Dataset>,
    optimizer: &OptimizerConfig,
    cfg: &TrainConfig,
) -> Result<History> {
    let mut history = History::new();
    train_into(model, rule, evaluator, data, validation, optimizer, cfg, &mut history)?;
    Ok(history)
}
