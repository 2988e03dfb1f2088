//! Declarative medical-concept rules.
//!
//! A concept is either a binary indicator (`any`: true when at least one
//! predicate holds) or an ordered staging (`staged`: the most severe level
//! whose predicates hold). Predicates are evaluated in three-valued logic so
//! that missing measurements produce missing labels rather than guesses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::ConceptSpec;

/// Conjunction of bounds on one feature, e.g. `70 < fvc ≤ 80`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub le: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eq: Option<f64>,
}

impl Predicate {
    /// `None` when the feature is unavailable.
    pub fn eval(&self, value: Option<f64>) -> Option<bool> {
        let v = value?;
        Some(
            self.lt.is_none_or(|b| v < b)
                && self.le.is_none_or(|b| v <= b)
                && self.gt.is_none_or(|b| v > b)
                && self.ge.is_none_or(|b| v >= b)
                && self.eq.is_none_or(|b| v == b),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConceptRule {
    /// Binary: class 1 when any predicate holds.
    Any(Vec<Predicate>),
    /// Ordered levels, least severe first; class index = level index.
    Staged(Vec<Vec<Predicate>>),
}

impl ConceptRule {
    pub fn num_classes(&self) -> usize {
        match self {
            ConceptRule::Any(_) => 2,
            ConceptRule::Staged(levels) => levels.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptDefinition {
    pub name: String,
    pub rule: ConceptRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleGroup {
    pub name: String,
    pub concepts: Vec<ConceptDefinition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptRuleSet {
    pub groups: Vec<RuleGroup>,
    /// Source criteria that have no simulated feature; kept for reference.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unimplemented: Vec<String>,
}

/// Kleene OR over predicates.
fn any_of(preds: &[Predicate], lookup: &impl Fn(&str) -> Option<f64>) -> Option<bool> {
    let mut unknown = false;
    for p in preds {
        match p.eval(lookup(&p.feature)) {
            Some(true) => return Some(true),
            Some(false) => {}
            None => unknown = true,
        }
    }
    if unknown {
        None
    } else {
        Some(false)
    }
}

impl ConceptRule {
    pub fn evaluate(&self, lookup: &impl Fn(&str) -> Option<f64>) -> Option<usize> {
        match self {
            ConceptRule::Any(preds) => any_of(preds, lookup).map(usize::from),
            ConceptRule::Staged(levels) => {
                // the most severe satisfied level wins; an undecidable level
                // above it leaves the stage undetermined
                for (i, level) in levels.iter().enumerate().rev() {
                    match any_of(level, lookup) {
                        Some(true) => return Some(i),
                        Some(false) => {}
                        None => return None,
                    }
                }
                None
            }
        }
    }
}

impl ConceptRuleSet {
    pub fn definitions(&self) -> impl Iterator<Item = (&RuleGroup, &ConceptDefinition)> {
        self.groups.iter().flat_map(|g| g.concepts.iter().map(move |c| (g, c)))
    }

    /// Concept columns produced by this rule set, in labeling order.
    pub fn concept_specs(&self) -> Vec<ConceptSpec> {
        self.definitions()
            .map(|(g, c)| ConceptSpec { name: c.name.clone(), num_classes: c.rule.num_classes(), group: g.name.clone() })
            .collect()
    }

    /// Labels one visit; `lookup` returns `None` for unavailable features.
    pub fn label(&self, lookup: impl Fn(&str) -> Option<f64>) -> Vec<Option<usize>> {
        self.definitions().map(|(_, c)| c.rule.evaluate(&lookup)).collect()
    }

    /// Every feature name referenced by a predicate.
    pub fn referenced_features(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, c) in self.definitions() {
            let preds: Vec<&Predicate> = match &c.rule {
                ConceptRule::Any(p) => p.iter().collect(),
                ConceptRule::Staged(levels) => levels.iter().flatten().collect(),
            };
            for p in preds {
                if !out.contains(&p.feature) {
                    out.push(p.feature.clone());
                }
            }
        }
        out
    }
}

/// One labeled concept for a visit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptLabel {
    pub group: String,
    pub concept: String,
    /// `None` when the rules cannot decide from the available features.
    pub class: Option<usize>,
}

/// Labels a single visit given its measurements by name. Features absent
/// from `row` count as missing.
pub fn label_concepts(row: &BTreeMap<String, f64>, rules: &ConceptRuleSet) -> Vec<ConceptLabel> {
    let classes = rules.label(|name| row.get(name).copied());
    rules
        .definitions()
        .zip(classes)
        .map(|((g, c), class)| ConceptLabel { group: g.name.clone(), concept: c.name.clone(), class })
        .collect()
}
