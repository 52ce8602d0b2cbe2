//! Spiking cells (LIF, ALIF), the leaky readout, dense layers and the
//! [`Model`] wrapper the learning rules operate on.

mod cell;
mod mlp;
mod model;
mod recurrent;

pub use cell::{alif_step, lif_step, AlifParams, CellParams, CellState, LifParams};
pub use mlp::{mlp_forward, Activation, DenseLayer, Mlp};
pub use model::{Forward, Model, RecordedForward};
pub use recurrent::{
    firing_rate, readout_step, CellKind, OutputMode, ReadoutParams, RecordedRun, RecurrentConfig,
    RecurrentNet, Unrolled, B_OUT, W_IN, W_OUT, W_REC,
};

pub(crate) use recurrent::{dims3, gaussian};
