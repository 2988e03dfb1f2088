//! Synthetic cohorts with known latent dynamics and rule-derived concepts.

mod config;
mod missing;
mod rules;
mod simulate;

pub use config::{BundleSpec, Dynamics, FeatureSpec, RuleSource, SimConfig, StaticDistribution, StaticSpec, VisitRange};
pub use missing::apply_missingness;
pub use rules::{label_concepts, ConceptDefinition, ConceptLabel, ConceptRule, ConceptRuleSet, Predicate, RuleGroup};
pub use simulate::{schema_for, simulate_cohort, SimOutput};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("simulation config: {0}")]
    Config(String),
}
