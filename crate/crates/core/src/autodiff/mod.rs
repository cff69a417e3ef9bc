//! Reverse-mode differentiation over dense `f64` tensors.

mod adam;
mod gradcheck;
mod lstm;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{analytic_gradients, finite_difference_errors, grad_check};
pub use lstm::{lstm_sequence, lstm_step, LstmWeights};
pub use tape::{Elementwise, Gradients, Tape, Var, LOG_CLAMP};
pub use tensor::Tensor;
