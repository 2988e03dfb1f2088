//! Latent trajectories, DTW distances, k-medoids and neighbor retrieval.

mod dtw;
mod kmedoids;

pub use dtw::{dtw_distance, euclidean, pairwise_distances, zscore, DistanceMatrix};
pub use kmedoids::{kmedoids, knn, KMedoids};

use crate::cohort::PatientRecord;
use crate::forecast::posterior_mean;
use crate::kernel::{KernelError, Tape, Tensor};
use crate::model::{Model, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Forecast(#[from] crate::forecast::ForecastError),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub id: String,
    /// `T × L` posterior means given every visit.
    pub h: Vec<Vec<f64>>,
}

/// Posterior mean trajectory conditioned on all visits. Concept labels are
/// dropped before encoding.
pub fn latent_trajectory(model: &Model, record: &PatientRecord) -> Result<LatentTrajectory, ClusterError> {
    let mut blind = record.clone();
    blind.y = crate::cohort::MaskedMatrix::unobserved(record.y.rows(), record.y.cols());
    let pt = model.tensors(&blind);
    let mean = posterior_mean(model, &pt, pt.num_visits())?;
    Ok(LatentTrajectory { id: record.id.clone(), h: mean.to_rows() })
}

/// Concept probabilities along a latent trajectory: one `T × K` table per
/// concept, `None` for unguided concepts.
pub fn concept_profile(
    model: &Model,
    record: &PatientRecord,
    h: &[Vec<f64>],
) -> Result<Vec<Option<Tensor>>, ClusterError> {
    let pt = model.tensors(record);
    let mut tape = Tape::new(model.params());
    let z = tape.input(Tensor::from_rows(h)?)?;
    let probs = model.guide(&mut tape, z, &pt, None)?;
    Ok(probs.into_iter().map(|p| p.map(|v| tape.value(v).clone())).collect())
}
