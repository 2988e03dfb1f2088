//! Minimal deterministic reverse-mode differentiation kernel.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::finite_difference_check;
pub use layers::{dropout, lstm_step, LstmWeights};
pub use params::{Gradients, NamedTensor, ParamId, ParamStore};
pub use tape::{kl_diag_value, sigmoid, softplus, Activation, Adjoints, Tape, Var, PROB_FLOOR, SD_CLAMP};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
}
