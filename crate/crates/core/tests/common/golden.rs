//! Hand-written boundary table for the organ rules in `configs/rules/ssc.json`.
//! Shared by the core tests and the acceptance suite.

use std::collections::BTreeMap;

use gtlvm_core::synth::{label_concepts, ConceptRuleSet};

pub struct GoldenCase {
    pub label: &'static str,
    /// Overrides of the healthy baseline row; `None` removes the feature.
    pub set: Vec<(&'static str, Option<f64>)>,
    pub concept: &'static str,
    /// Expected class index (stages are stored as stage − 1).
    pub expect: Option<usize>,
}

pub fn ssc_rules() -> ConceptRuleSet {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/rules/ssc.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("rules file")).expect("rules parse")
}

fn baseline() -> BTreeMap<String, f64> {
    [
        ("fvc", 90.0),
        ("ild_extent", 0.0),
        ("ild_on_hrct", 0.0),
        ("dyspnea", 1.0),
        ("lung_transplant", 0.0),
        ("lvef", 60.0),
        ("cardiopulmonary_worsening", 0.0),
        ("diastolic_dysfunction", 0.0),
        ("ventricular_arrhythmia", 0.0),
        ("pericardial_effusion", 0.0),
        ("conduction_block", 0.0),
        ("bnp", 20.0),
        ("ntprobnp", 80.0),
        ("joint_synovitis", 0.0),
        ("tendon_friction_rubs", 0.0),
        ("das28", 2.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn case(
    label: &'static str,
    set: &[(&'static str, Option<f64>)],
    concept: &'static str,
    expect: Option<usize>,
) -> GoldenCase {
    GoldenCase { label, set: set.to_vec(), concept, expect }
}

fn stage(s: usize) -> Option<usize> {
    Some(s - 1)
}

pub fn cases() -> Vec<GoldenCase> {
    let yes = Some(1);
    let no = Some(0);
    vec![
        case("fvc 65 without ild is lung involvement", &[("fvc", Some(65.0))], "lung_involvement", yes),
        case("fvc 70 is not below 70", &[("fvc", Some(70.0))], "lung_involvement", no),
        case("ild on hrct alone is lung involvement", &[("ild_on_hrct", Some(1.0))], "lung_involvement", yes),
        case("healthy lung is not involved", &[], "lung_involvement", no),
        case("fvc 45 is lung stage 4", &[("fvc", Some(45.0))], "lung_stage", stage(4)),
        case(
            "fvc 75 with extent 10 and dyspnea 1 is stage 2",
            &[("fvc", Some(75.0)), ("ild_extent", Some(10.0)), ("dyspnea", Some(1.0))],
            "lung_stage",
            stage(2),
        ),
        case("fvc 70 is stage 3", &[("fvc", Some(70.0))], "lung_stage", stage(3)),
        case("fvc 70.5 is stage 2", &[("fvc", Some(70.5))], "lung_stage", stage(2)),
        case("fvc 80 is stage 2", &[("fvc", Some(80.0))], "lung_stage", stage(2)),
        case("fvc 80.5 is stage 1", &[("fvc", Some(80.5))], "lung_stage", stage(1)),
        case("fvc 50 is stage 3", &[("fvc", Some(50.0))], "lung_stage", stage(3)),
        case("fvc 49.9 is stage 4", &[("fvc", Some(49.9))], "lung_stage", stage(4)),
        case("dyspnea 2 with good fvc is stage 1", &[("dyspnea", Some(2.0))], "lung_stage", stage(1)),
        case("dyspnea 3 raises lung stage to 2", &[("dyspnea", Some(3.0))], "lung_stage", stage(2)),
        case("dyspnea 4 selects the most severe lung stage", &[("dyspnea", Some(4.0))], "lung_stage", stage(4)),
        case("ild extent exactly 20 triggers neither bound", &[("ild_extent", Some(20.0))], "lung_stage", stage(1)),
        case("ild extent 25 is stage 3", &[("ild_extent", Some(25.0))], "lung_stage", stage(3)),
        case("lung transplant is stage 4", &[("lung_transplant", Some(1.0))], "lung_stage", stage(4)),
        case(
            "stage 2 fvc with stage 3 extent picks stage 3",
            &[("fvc", Some(75.0)), ("ild_extent", Some(25.0))],
            "lung_stage",
            stage(3),
        ),
        case("missing fvc and no ild leaves involvement unknown", &[("fvc", None)], "lung_involvement", None),
        case(
            "missing fvc with ild present is still involvement",
            &[("fvc", None), ("ild_on_hrct", Some(1.0))],
            "lung_involvement",
            yes,
        ),
        case("severe fvc decides stage without dyspnea", &[("fvc", Some(45.0)), ("dyspnea", None)], "lung_stage", stage(4)),
        case("missing dyspnea leaves a mild lung stage unknown", &[("dyspnea", None)], "lung_stage", None),
        case("das28 2.69 is joints stage 1", &[("das28", Some(2.69))], "joints_stage", stage(1)),
        case("das28 2.7 is joints stage 2", &[("das28", Some(2.7))], "joints_stage", stage(2)),
        case("das28 3.2 is joints stage 2", &[("das28", Some(3.2))], "joints_stage", stage(2)),
        case("das28 3.21 is joints stage 3", &[("das28", Some(3.21))], "joints_stage", stage(3)),
        case("das28 5.1 is joints stage 3", &[("das28", Some(5.1))], "joints_stage", stage(3)),
        case("das28 5.11 is joints stage 4", &[("das28", Some(5.11))], "joints_stage", stage(4)),
        case("synovitis is joint involvement", &[("joint_synovitis", Some(1.0))], "joints_involvement", yes),
        case("tendon rubs are joint involvement", &[("tendon_friction_rubs", Some(1.0))], "joints_involvement", yes),
        case("quiet joints are not involved", &[], "joints_involvement", no),
        case("lvef 45 is not reduced", &[("lvef", Some(45.0))], "heart_involvement", no),
        case("lvef 44.9 is heart involvement", &[("lvef", Some(44.9))], "heart_involvement", yes),
        case("bnp 35 is not elevated", &[("bnp", Some(35.0))], "heart_involvement", no),
        case("bnp 35.1 is heart involvement", &[("bnp", Some(35.1))], "heart_involvement", yes),
        case("ntprobnp 125 is not elevated", &[("ntprobnp", Some(125.0))], "heart_involvement", no),
        case("ntprobnp 126 is heart involvement", &[("ntprobnp", Some(126.0))], "heart_involvement", yes),
        case("worsening is heart involvement", &[("cardiopulmonary_worsening", Some(1.0))], "heart_involvement", yes),
        case("diastolic dysfunction is heart involvement", &[("diastolic_dysfunction", Some(1.0))], "heart_involvement", yes),
        case("ventricular arrhythmia is heart involvement", &[("ventricular_arrhythmia", Some(1.0))], "heart_involvement", yes),
        case("pericardial effusion is heart involvement", &[("pericardial_effusion", Some(1.0))], "heart_involvement", yes),
        case("conduction block is heart involvement", &[("conduction_block", Some(1.0))], "heart_involvement", yes),
        case("dyspnea 1 is heart stage 1", &[], "heart_stage", stage(1)),
        case("dyspnea 3 is heart stage 3", &[("dyspnea", Some(3.0))], "heart_stage", stage(3)),
        case("dyspnea 4 is heart stage 4", &[("dyspnea", Some(4.0))], "heart_stage", stage(4)),
        case("no dyspnea leaves heart stage unset", &[("dyspnea", Some(0.0))], "heart_stage", None),
    ]
}

/// Runs one case; returns the produced class on mismatch.
pub fn run(rules: &ConceptRuleSet, c: &GoldenCase) -> Result<(), Option<usize>> {
    let mut row = baseline();
    for (k, v) in &c.set {
        match v {
            Some(v) => {
                row.insert(k.to_string(), *v);
            }
            None => {
                row.remove(*k);
            }
        }
    }
    let got = label_concepts(&row, rules)
        .into_iter()
        .find(|l| l.concept == c.concept)
        .unwrap_or_else(|| panic!("unknown concept {}", c.concept))
        .class;
    if got == c.expect {
        Ok(())
    } else {
        Err(got)
    }
}
