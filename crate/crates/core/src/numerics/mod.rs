//! Dense tensors, a scoped reverse-mode tape and spike pseudo-derivatives.

mod fd;
mod map;
mod pseudo;
mod tape;
mod tensor;

pub use fd::finite_difference_gradient;
pub use map::{GradientSet, ParamSet, TensorMap};
pub use pseudo::{heaviside_with_pseudo, PseudoDerivative, PseudoKind};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
