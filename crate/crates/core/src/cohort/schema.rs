use serde::{Deserialize, Serialize};

use super::CohortError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousFeature {
    pub name: String,
    #[serde(default)]
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalFeature {
    pub name: String,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptSpec {
    pub name: String,
    pub num_classes: usize,
    pub group: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticField {
    pub name: String,
    pub kind: StaticKind,
}

/// Configuration hash and seed of the run that produced an artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

/// Column layout of a cohort. Measurement columns are ordered continuous
/// features first, then categorical ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub continuous_features: Vec<ContinuousFeature>,
    pub categorical_features: Vec<CategoricalFeature>,
    pub concepts: Vec<ConceptSpec>,
    pub static_fields: Vec<StaticField>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub declared_d: Option<usize>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub declared_p: Option<usize>,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub declared_s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl FeatureSchema {
    pub fn new(
        continuous_features: Vec<ContinuousFeature>,
        categorical_features: Vec<CategoricalFeature>,
        concepts: Vec<ConceptSpec>,
        static_fields: Vec<StaticField>,
    ) -> Self {
        let mut s = Self {
            continuous_features,
            categorical_features,
            concepts,
            static_fields,
            declared_d: None,
            declared_p: None,
            declared_s: None,
            provenance: None,
        };
        s.stamp_counts();
        s
    }

    /// Writes the derived counts into the serialized `D`, `P`, `S` fields.
    pub fn stamp_counts(&mut self) {
        self.declared_d = Some(self.d());
        self.declared_p = Some(self.p());
        self.declared_s = Some(self.s());
    }

    pub fn d(&self) -> usize {
        self.continuous_features.len() + self.categorical_features.len()
    }

    pub fn p(&self) -> usize {
        self.concepts.len()
    }

    pub fn s(&self) -> usize {
        self.static_fields.len()
    }

    pub fn num_continuous(&self) -> usize {
        self.continuous_features.len()
    }

    pub fn num_categorical(&self) -> usize {
        self.categorical_features.len()
    }

    /// Column index of a measurement by name.
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.continuous_features
            .iter()
            .position(|f| f.name == name)
            .or_else(|| {
                self.categorical_features.iter().position(|f| f.name == name).map(|i| i + self.num_continuous())
            })
    }

    pub fn feature_name(&self, col: usize) -> &str {
        if col < self.num_continuous() {
            &self.continuous_features[col].name
        } else {
            &self.categorical_features[col - self.num_continuous()].name
        }
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.name == name)
    }

    /// Concept groups in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.concepts {
            if !out.contains(&c.group) {
                out.push(c.group.clone());
            }
        }
        out
    }

    pub fn concepts_in_group(&self, group: &str) -> Vec<usize> {
        self.concepts.iter().enumerate().filter(|(_, c)| c.group == group).map(|(i, _)| i).collect()
    }

    pub fn validate(&self) -> Result<(), CohortError> {
        let mut names: Vec<&str> = self
            .continuous_features
            .iter()
            .map(|f| f.name.as_str())
            .chain(self.categorical_features.iter().map(|f| f.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(CohortError::Schema(format!("duplicate feature name '{}'", w[0])));
        }
        if let Some(f) = self.categorical_features.iter().find(|f| f.num_classes < 2) {
            return Err(CohortError::Schema(format!("categorical feature '{}' needs ≥ 2 classes", f.name)));
        }
        if let Some(c) = self.concepts.iter().find(|c| c.num_classes < 2) {
            return Err(CohortError::Schema(format!("concept '{}' needs ≥ 2 classes", c.name)));
        }
        if let Some(c) = self.concepts.iter().find(|c| c.group.is_empty()) {
            return Err(CohortError::Schema(format!("concept '{}' has no group", c.name)));
        }
        for (declared, actual, label) in
            [(self.declared_d, self.d(), "D"), (self.declared_p, self.p(), "P"), (self.declared_s, self.s(), "S")]
        {
            if let Some(v) = declared {
                if v != actual {
                    return Err(CohortError::Schema(format!("{label} = {v} but the schema lists {actual}")));
                }
            }
        }
        Ok(())
    }
}
