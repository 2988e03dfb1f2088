use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rules::ConceptRuleSet;
use super::SynthError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisitRange {
    pub min: usize,
    pub max: usize,
}

/// Damped random walk per factor: `f ← a·f + drift·Δ + N(0, Δ·q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    #[serde(default = "default_decay")]
    pub decay: f64,
    pub process_var: f64,
    pub init_sd: f64,
    /// Population drift per factor; empty means zero.
    #[serde(default)]
    pub drift: Vec<f64>,
    /// Per-patient random drift around the population value.
    #[serde(default)]
    pub drift_sd: f64,
    /// `n_factors × S` effect of static covariates on drift.
    #[serde(default)]
    pub static_drift: Vec<Vec<f64>>,
}

fn default_decay() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StaticDistribution {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticSpec {
    pub name: String,
    pub distribution: StaticDistribution,
}

/// Trajectory bundle: shifts the initial state and the drift of its members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSpec {
    #[serde(default)]
    pub init: Vec<f64>,
    #[serde(default)]
    pub drift: Vec<f64>,
}

/// One measured feature. A feature with `thresholds` is categorical with
/// `thresholds.len() + 1` classes; its class is the number of thresholds the
/// (noisy) score exceeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub intercept: f64,
    pub loading: Vec<f64>,
    pub noise_sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    /// Physical range, applied to continuous values after noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<(f64, f64)>,
}

impl FeatureSpec {
    pub fn is_categorical(&self) -> bool {
        self.thresholds.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSource {
    /// Path relative to the config file that names it.
    File(PathBuf),
    Inline(ConceptRuleSet),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_patients: usize,
    pub visits: VisitRange,
    pub visit_gap: f64,
    pub n_factors: usize,
    pub dynamics: Dynamics,
    #[serde(default)]
    pub statics: Vec<StaticSpec>,
    #[serde(default)]
    pub bundles: Vec<BundleSpec>,
    pub features: Vec<FeatureSpec>,
    pub rules: RuleSource,
    pub missing_rate_x: f64,
    pub missing_rate_y: f64,
    /// Overridden by the run seed when driven from a run config.
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    /// Replaces a file rule source by its parsed contents, resolving the
    /// path against `base_dir`.
    pub fn resolve_rules(&mut self, base_dir: &Path) -> Result<(), SynthError> {
        if let RuleSource::File(p) = &self.rules {
            let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| SynthError::Config(format!("cannot read rules {}: {e}", path.display())))?;
            let rules: ConceptRuleSet = serde_json::from_str(&text)
                .map_err(|e| SynthError::Config(format!("rules {}: {e}", path.display())))?;
            self.rules = RuleSource::Inline(rules);
        }
        Ok(())
    }

    pub fn rule_set(&self) -> Result<&ConceptRuleSet, SynthError> {
        match &self.rules {
            RuleSource::Inline(r) => Ok(r),
            RuleSource::File(p) => Err(SynthError::Config(format!("rules file {} not resolved", p.display()))),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        if self.visits.min < 1 || self.visits.max < self.visits.min {
            return bad(format!("invalid visit range {}..={}", self.visits.min, self.visits.max));
        }
        if !(self.visit_gap > 0.0 && self.visit_gap.is_finite()) {
            return bad("visit_gap must be positive".into());
        }
        for (name, r) in [("missing_rate_x", self.missing_rate_x), ("missing_rate_y", self.missing_rate_y)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} = {r} outside [0, 1]"));
            }
        }
        let k = self.n_factors;
        let d = &self.dynamics;
        if d.process_var < 0.0 || d.init_sd < 0.0 || d.drift_sd < 0.0 {
            return bad("dynamics variances must be non-negative".into());
        }
        if !d.drift.is_empty() && d.drift.len() != k {
            return bad(format!("drift has {} entries, expected {k}", d.drift.len()));
        }
        if !d.static_drift.is_empty()
            && (d.static_drift.len() != k || d.static_drift.iter().any(|r| r.len() != self.statics.len()))
        {
            return bad(format!("static_drift must be {k} x {}", self.statics.len()));
        }
        for (i, b) in self.bundles.iter().enumerate() {
            if (!b.init.is_empty() && b.init.len() != k) || (!b.drift.is_empty() && b.drift.len() != k) {
                return bad(format!("bundle {i} offsets must have {k} entries"));
            }
        }
        if self.features.is_empty() {
            return bad("no features".into());
        }
        for f in &self.features {
            if f.loading.len() != k {
                return bad(format!("feature '{}' loading has {} entries, expected {k}", f.name, f.loading.len()));
            }
            if !(f.noise_sd > 0.0) {
                return bad(format!("feature '{}' noise_sd must be positive", f.name));
            }
            if let Some(t) = &f.thresholds {
                if t.is_empty() || t.windows(2).any(|w| w[0] >= w[1]) {
                    return bad(format!("feature '{}' thresholds must be non-empty and increasing", f.name));
                }
            }
            if let Some((lo, hi)) = f.clip {
                if lo > hi {
                    return bad(format!("feature '{}' clip range is empty", f.name));
                }
            }
        }
        self.rule_set()?;
        Ok(())
    }
}
