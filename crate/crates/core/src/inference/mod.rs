//! The masked, guided bound and its optimization.

mod losses;
mod objective;
mod train;

pub use losses::{kl_diag_gaussian, masked_categorical_ce, masked_gaussian_nll};
pub use objective::{
    choose_ks, cohort_objective, draw_noise, elbo_loss, elbo_on_tape, patient_objective, KStrategy, LossBreakdown, LossWeights,
    ObjectiveSpec,
};
pub use train::{train, validation_objective, EpochRecord, TrainConfig, TrainOutcome};

use crate::kernel::KernelError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("empty cohort")]
    EmptyCohort,
    #[error("train config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite loss or gradient ({0})")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: {cause}")]
    Diverged { epoch: usize, cause: String, last_good: Box<TrainOutcome> },
}
