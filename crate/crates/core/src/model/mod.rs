//! The prior, posterior, likelihood and guidance networks.

mod checkpoint;
mod config;
mod inputs;
mod nets;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{GuidanceGroup, GuidancePartition, ModelConfig, Widths};
pub use inputs::{encoder_input_dim, LabelColumn, PatientTensors};
pub use nets::{Decoded, Gaussian, InitOptions, Model, SD_FLOOR};

use crate::kernel::KernelError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("model config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
