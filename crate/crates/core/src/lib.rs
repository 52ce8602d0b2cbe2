//! Spiking-network learning-rule workbench.
//!
//! - [`numerics`]: tensors, the reverse-mode tape and spike pseudo-derivatives
//! - [`neurons`]: LIF/ALIF cells, leaky readout, dense layers
//! - [`encoding`]: temporal-contrast, step-forward and moving-window spike encoders
//! - [`rules`]: BPTT, e-prop, the Manhattan rule and Langevin posterior sampling
//! - [`training`]: evaluator, optimizers, trainer and the gradient-comparison harness
//! - [`data`]: IDX/CSV loaders and synthetic tasks

pub mod data;
pub mod encoding;
pub mod error;
pub mod neurons;
pub mod numerics;
pub mod rules;
pub mod training;

pub use error::{Error, Result};
