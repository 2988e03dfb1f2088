//! One configuration file for a whole run: simulation, data handling, model,
//! training, evaluation and clustering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::forecast::EvalConfig;
use crate::inference::TrainConfig;
use crate::model::ModelConfig;
use crate::rng::derive_seed;
use crate::synth::SimConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub min_visits: usize,
    /// Train, validation and test fractions.
    pub split: (f64, f64, f64),
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { min_visits: 5, split: (0.7, 0.15, 0.15) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iter: usize,
    pub restarts: usize,
    pub window: Option<usize>,
    pub zscore: bool,
    pub neighbors: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 3, max_iter: 100, restarts: 5, window: None, zscore: false, neighbors: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub simulate: Option<SimConfig>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluate: EvalConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
}

impl RunConfig {
    /// Parses `text`; rule files are resolved relative to `base_dir`.
    pub fn parse(text: &str, path: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        if let Some(sim) = cfg.simulate.as_mut() {
            sim.resolve_rules(base_dir).map_err(|e| ConfigError::Invalid(format!("{path}: {e}")))?;
        }
        cfg.reseed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::parse(&text, &path.display().to_string(), base)?, text))
    }

    /// Sets the run seed and every stage seed derived from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(sim) = self.simulate.as_mut() {
            sim.seed = derive_seed(seed, "simulate");
        }
        self.train.seed = derive_seed(seed, "train");
        self.evaluate.seed = derive_seed(seed, "evaluate");
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn cluster_seed(&self) -> u64 {
        derive_seed(self.seed, "cluster")
    }
}

/// Hex SHA-256 of a config file's bytes.
pub fn config_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(text.as_bytes()))
}
