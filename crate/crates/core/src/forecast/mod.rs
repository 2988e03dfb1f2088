//! Predictive distributions and the evaluation battery.

mod baselines;
mod evaluate;
mod metrics;
mod predict;

pub use baselines::{baseline_last_concepts, baseline_last_value, CohortBaseline};
pub use evaluate::{evaluate, EvalConfig, EvalReport, FeatureScores, Horizon, MethodScores};
pub use metrics::{calibration_curve, coverage, macro_f1, rmse, CalibrationCurve};
pub use predict::{posterior_mean, predict, CellSummary, IntervalMode, PredictiveSamples};

use crate::kernel::KernelError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no observed cells for {0}")]
    NoCells(&'static str),
}
