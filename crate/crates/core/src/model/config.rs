use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::cohort::FeatureSchema;

/// Assignment of latent columns and concepts to guidance groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceGroup {
    pub name: String,
    /// Latent columns the group's heads may read (0-based).
    pub latent: Vec<usize>,
    /// Concept columns predicted by the group (0-based).
    pub concepts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidancePartition {
    pub groups: Vec<GuidanceGroup>,
}

impl GuidancePartition {
    /// Splits `latent_dim` into equal contiguous blocks, one per concept group
    /// of the schema in order of first appearance. Left-over columns stay
    /// unguided.
    pub fn even(schema: &FeatureSchema, latent_dim: usize) -> Result<Self, ModelError> {
        let names = schema.groups();
        if names.is_empty() {
            return Ok(Self { groups: vec![] });
        }
        let width = latent_dim / names.len();
        if width == 0 {
            return Err(ModelError::Config(format!(
                "latent dimension {latent_dim} cannot host {} guidance groups",
                names.len()
            )));
        }
        let groups = names
            .iter()
            .enumerate()
            .map(|(i, g)| GuidanceGroup {
                name: g.clone(),
                latent: (i * width..(i + 1) * width).collect(),
                concepts: schema.concepts_in_group(g),
            })
            .collect();
        Ok(Self { groups })
    }

    pub fn validate(&self, latent_dim: usize, num_concepts: usize) -> Result<(), ModelError> {
        let mut used_latent = vec![false; latent_dim];
        let mut used_concept = vec![false; num_concepts];
        for g in &self.groups {
            if g.latent.is_empty() || g.concepts.is_empty() {
                return Err(ModelError::Config(format!("guidance group '{}' needs latent columns and concepts", g.name)));
            }
            for &l in &g.latent {
                if l >= latent_dim {
                    return Err(ModelError::Config(format!(
                        "guidance group '{}' uses latent column {l} but L = {latent_dim}",
                        g.name
                    )));
                }
                if std::mem::replace(&mut used_latent[l], true) {
                    return Err(ModelError::Config(format!("latent column {l} belongs to two guidance groups")));
                }
            }
            for &c in &g.concepts {
                if c >= num_concepts {
                    return Err(ModelError::Config(format!(
                        "guidance group '{}' uses concept {c} but P = {num_concepts}",
                        g.name
                    )));
                }
                if std::mem::replace(&mut used_concept[c], true) {
                    return Err(ModelError::Config(format!("concept {c} belongs to two guidance groups")));
                }
            }
        }
        Ok(())
    }

    /// Group index guiding each concept, if any.
    pub fn group_of_concept(&self, num_concepts: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_concepts];
        for (gi, g) in self.groups.iter().enumerate() {
            for &c in &g.concepts {
                out[c] = Some(gi);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Widths {
    pub recurrent: usize,
    pub dense: usize,
    pub likelihood: usize,
    pub guidance: usize,
    pub prior: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self { recurrent: 100, dense: 100, likelihood: 100, guidance: 40, prior: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Defaults to an even split of the latent columns over concept groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<GuidancePartition>,
    #[serde(default)]
    pub widths: Widths,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "yes")]
    pub probabilistic: bool,
    #[serde(default = "yes")]
    pub learn_sigma: bool,
    /// Feed the context to the guidance heads in addition to z.
    #[serde(default)]
    pub guidance_context: bool,
    /// Time values are divided by this before entering any network.
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
}

fn default_dropout() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

fn default_time_scale() -> f64 {
    10.0
}

impl ModelConfig {
    pub fn new(latent_dim: usize) -> Self {
        Self {
            latent_dim,
            partition: None,
            widths: Widths::default(),
            dropout: default_dropout(),
            probabilistic: true,
            learn_sigma: true,
            guidance_context: false,
            time_scale: default_time_scale(),
        }
    }

    /// Fills in the default partition and checks the config against `schema`.
    pub fn resolve(&self, schema: &FeatureSchema) -> Result<ModelConfig, ModelError> {
        let mut out = self.clone();
        if out.latent_dim == 0 {
            return Err(ModelError::Config("latent_dim must be positive".into()));
        }
        let w = &out.widths;
        if [w.recurrent, w.dense, w.likelihood, w.guidance, w.prior].contains(&0) {
            return Err(ModelError::Config("network widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&out.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", out.dropout)));
        }
        if !(out.time_scale > 0.0 && out.time_scale.is_finite()) {
            return Err(ModelError::Config("time_scale must be positive".into()));
        }
        if out.partition.is_none() {
            out.partition = Some(GuidancePartition::even(schema, out.latent_dim)?);
        }
        out.partition().validate(out.latent_dim, schema.p())?;
        Ok(out)
    }

    pub fn partition(&self) -> &GuidancePartition {
        self.partition.as_ref().expect("resolved model config")
    }
}
