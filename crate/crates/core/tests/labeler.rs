mod common;

use std::collections::BTreeMap;

use common::golden::{cases, run, ssc_rules};
use gtlvm_core::synth::label_concepts;
use proptest::prelude::*;

#[test]
fn golden_boundary_table() {
    let rules = ssc_rules();
    let table = cases();
    assert!(table.len() >= 20);
    let failures: Vec<String> = table
        .iter()
        .filter_map(|c| run(&rules, c).err().map(|got| format!("{}: expected {:?}, got {got:?}", c.label, c.expect)))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn default_rules_have_eleven_concepts_in_three_groups() {
    let specs = ssc_rules().concept_specs();
    assert_eq!(specs.len(), 11);
    let groups: Vec<&str> = specs.iter().map(|s| s.group.as_str()).collect();
    for g in ["lung", "heart", "joints"] {
        assert!(groups.contains(&g));
    }
}

proptest! {
    #[test]
    fn labeling_is_pure(fvc in 20.0f64..120.0, das in 0.0f64..8.0, dys in 0u8..5, ild in proptest::bool::ANY) {
        let rules = ssc_rules();
        let mut row = BTreeMap::new();
        row.insert("fvc".to_string(), fvc);
        row.insert("das28".to_string(), das);
        row.insert("dyspnea".to_string(), f64::from(dys));
        row.insert("ild_on_hrct".to_string(), f64::from(u8::from(ild)));
        prop_assert_eq!(label_concepts(&row, &rules), label_concepts(&row, &rules));
    }
}
