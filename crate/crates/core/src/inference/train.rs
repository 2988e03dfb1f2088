use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::objective::{cohort_objective, KStrategy, LossBreakdown, LossWeights, ObjectiveSpec};
use super::InferenceError;
use crate::kernel::{AdamConfig, AdamState};
use crate::model::{Model, PatientTensors};
use crate::rng::{derive_seed, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub mc_samples: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub k_strategy: KStrategy,
    pub adam: AdamConfig,
    /// Set by the caller from the run seed unless given explicitly.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.01,
            mc_samples: 1,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            k_strategy: KStrategy::Subsample(2),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, mc_samples: self.mc_samples }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(InferenceError::Config("alpha and beta must be non-negative".into()));
        }
        if self.mc_samples == 0 || self.batch_size == 0 {
            return Err(InferenceError::Config("mc_samples and batch_size must be positive".into()));
        }
        if let KStrategy::Subsample(0) = self.k_strategy {
            return Err(InferenceError::Config("subsample needs at least one horizon".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation objective.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Full validation objective: every horizon, dropout off, noise fixed
/// across epochs.
pub fn validation_objective(
    model: &Model,
    patients: &[PatientTensors],
    weights: &LossWeights,
    seed: u64,
) -> Result<LossBreakdown, InferenceError> {
    let refs: Vec<&PatientTensors> = patients.iter().collect();
    let idx: Vec<u64> = (0..patients.len() as u64).collect();
    let spec = ObjectiveSpec {
        weights: *weights,
        strategy: KStrategy::All,
        stage: "validation",
        seed: derive_seed(seed, "validation"),
        dropout: false,
    };
    Ok(cohort_objective(model, &refs, &idx, &spec, false)?.0)
}

/// Minibatch Adam with early stopping on the validation objective. Epoch 0
/// records the starting point without updating.
pub fn train(
    initial: Model,
    train_set: &[PatientTensors],
    val_set: &[PatientTensors],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, InferenceError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(InferenceError::EmptyCohort);
    }
    let weights = config.weights();
    let mut model = initial;
    let mut adam = AdamState::new(model.params(), config.adam.clone());

    let start_val = validation_objective(&model, val_set, &weights, config.seed)?;
    let mut best_val = start_val.total;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let first = EpochRecord { epoch: 0, train: LossBreakdown::default(), validation: start_val, improved: true };
    on_epoch(&first);
    let mut history = vec![first];

    let train_seed = derive_seed(config.seed, "train");
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(train_seed, "shuffle", epoch as u64));
        let stage = format!("epoch-{epoch}");
        let spec = ObjectiveSpec { weights, strategy: config.k_strategy, stage: &stage, seed: train_seed, dropout: true };
        let mut epoch_train = LossBreakdown::default();
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&PatientTensors> = batch.iter().map(|&i| &train_set[i]).collect();
            let idx: Vec<u64> = batch.iter().map(|&i| i as u64).collect();
            let step = cohort_objective(&model, &refs, &idx, &spec, true).and_then(|(b, g)| {
                let g = g.expect("gradients requested");
                if !b.total.is_finite() || !g.is_finite() {
                    return Err(InferenceError::NonFinite(format!("epoch {epoch}")));
                }
                Ok((b, g))
            });
            let (b, g) = match step {
                Ok(x) => x,
                Err(e) => return Err(diverged(e, epoch, best, &history)),
            };
            epoch_train.accumulate(&b);
            if let Err(e) = adam.step(model.params_mut(), &g) {
                return Err(diverged(e.into(), epoch, best, &history));
            }
        }
        let val = match validation_objective(&model, val_set, &weights, config.seed) {
            Ok(v) if v.total.is_finite() => v,
            Ok(_) => return Err(diverged(InferenceError::NonFinite("validation".into()), epoch, best, &history)),
            Err(e) => return Err(diverged(e, epoch, best, &history)),
        };
        let improved = val.total < best_val;
        if improved {
            best_val = val.total;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let rec = EpochRecord { epoch, train: epoch_train, validation: val, improved };
        on_epoch(&rec);
        history.push(rec);
        if since_best > config.patience {
            break;
        }
    }
    Ok(TrainOutcome { model: best, history, best_epoch })
}

fn diverged(cause: InferenceError, epoch: usize, best: Model, history: &[EpochRecord]) -> InferenceError {
    InferenceError::Diverged {
        epoch,
        cause: cause.to_string(),
        last_good: Box::new(TrainOutcome { model: best, history: history.to_vec(), best_epoch: 0 }),
    }
}
