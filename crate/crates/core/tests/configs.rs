use std::path::PathBuf;

use gtlvm_core::config::RunConfig;
use gtlvm_core::synth::{schema_for, simulate_cohort};

fn shipped(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::load(&path).unwrap().0
}

#[test]
fn registry_sized_config_has_expected_shape() {
    let cfg = shipped("ssc_default.json");
    let mut sim = cfg.simulate.clone().unwrap();
    let schema = schema_for(&sim).unwrap();
    assert_eq!((schema.d(), schema.p(), schema.s()), (34, 11, 10));
    let model = cfg.model.clone().unwrap().resolve(&schema).unwrap();
    assert_eq!(model.latent_dim, 21);
    let blocks: Vec<usize> = model.partition().groups.iter().map(|g| g.latent.len()).collect();
    assert_eq!(blocks, vec![7, 7, 7]);

    sim.n_patients = 20;
    let out = simulate_cohort(&sim).unwrap();
    assert_eq!(out.cohort.patients.len(), 20);
    for r in &out.cohort.patients {
        assert!((5..=15).contains(&r.times.len()));
    }
}

#[test]
fn small_configs_resolve() {
    for (name, d, p) in [("two_organ.json", 8, 4), ("two_bundle.json", 8, 4)] {
        let cfg = shipped(name);
        let schema = schema_for(cfg.simulate.as_ref().unwrap()).unwrap();
        let model = cfg.model.clone().unwrap().resolve(&schema).unwrap();
        assert_eq!((schema.d(), schema.p(), model.latent_dim), (d, p, 6), "{name}");
    }
}
