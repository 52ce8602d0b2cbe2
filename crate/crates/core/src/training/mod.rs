//! Evaluation, optimizers, the training loop, rule comparison and the
//! posterior uncertainty report.

mod compare;
mod evaluator;
mod optim;
mod train;
mod uncertainty;

pub use compare::{
    compare_gradients, cosine, deviation_stats, mean_bias, relative_l2, CompareConfig, ComparisonRecord,
    DeviationStat, ALL_PARAMS,
};
pub use evaluator::{accuracy, Evaluation, Evaluator, Metric};
pub use optim::{adam_step, apply_naive, sgd_step, AdamState, Optimizer, OptimizerConfig, OptimizerKind};
pub use train::{train, train_into, EpochRecord, History, TrainConfig};
pub use uncertainty::{entropy_medians, median, uncertainty_report, UncertaintyRow};
