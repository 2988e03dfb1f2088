use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::cohort::{FeatureSchema, ScalerStats};
use crate::forecast::CohortBaseline;
use crate::kernel::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "gtlvm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reuse a trained model on new cohorts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub scaler: ScalerStats,
    /// Training-split marginals in standardized units.
    pub baseline: CohortBaseline,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(model: &Model, scaler: &ScalerStats, baseline: &CohortBaseline) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            schema: model.schema().clone(),
            scaler: scaler.clone(),
            baseline: baseline.clone(),
            params: model.params().clone(),
        }
    }

    pub fn model(&self) -> Result<Model, ModelError> {
        Model::from_parts(&self.config, &self.schema, self.params.clone())
    }

    pub fn write(&self, w: impl Write) -> Result<(), ModelError> {
        serde_json::to_writer(w, self).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn read(r: impl Read) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_reader(r).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("not a checkpoint (format '{}')", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        ck.schema.validate().map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.scaler.mean.len() != ck.schema.num_continuous() || ck.scaler.sd.len() != ck.schema.num_continuous() {
            return Err(ModelError::Checkpoint("scaler does not match the schema".into()));
        }
        let b = &ck.baseline;
        if b.cont_mean.len() != ck.schema.num_continuous()
            || b.cat_freq.len() != ck.schema.num_categorical()
            || b.concept_freq.len() != ck.schema.p()
        {
            return Err(ModelError::Checkpoint("baseline does not match the schema".into()));
        }
        ck.model()?;
        Ok(ck)
    }

    /// Checks that a cohort schema is the one the model was trained on.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        let strip = |s: &FeatureSchema| {
            let mut s = s.clone();
            s.provenance = None;
            s.stamp_counts();
            s
        };
        if strip(schema) != strip(&self.schema) {
            return Err(ModelError::Checkpoint("cohort schema differs from the checkpoint schema".into()));
        }
        Ok(())
    }
}
