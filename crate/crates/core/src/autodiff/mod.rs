//! Dense tensors with tape-based reverse-mode differentiation.

pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Activation, Gradients, Tape, Var, LN_GRAD_FLOOR};
pub use tensor::{Scalar, Tensor};
