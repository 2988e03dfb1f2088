use gtlvm_core::cohort::write_cohort_string;
use gtlvm_core::synth::{
    apply_missingness, simulate_cohort, BundleSpec, ConceptRule, ConceptRuleSet, Dynamics, FeatureSpec, Predicate,
    RuleGroup, RuleSource, SimConfig, VisitRange, ConceptDefinition,
};

fn feature(name: &str, loading: Vec<f64>, noise_sd: f64) -> FeatureSpec {
    FeatureSpec { name: name.into(), unit: String::new(), intercept: 0.0, loading, noise_sd, thresholds: None, clip: None }
}

fn above(feature: &str, v: f64) -> Predicate {
    Predicate { feature: feature.into(), gt: Some(v), ..Default::default() }
}

fn staged(feature: &str, cuts: [f64; 3]) -> ConceptRule {
    ConceptRule::Staged(vec![
        vec![Predicate { feature: feature.into(), le: Some(cuts[0]), ..Default::default() }],
        vec![Predicate { feature: feature.into(), gt: Some(cuts[0]), le: Some(cuts[1]), ..Default::default() }],
        vec![Predicate { feature: feature.into(), gt: Some(cuts[1]), le: Some(cuts[2]), ..Default::default() }],
        vec![above(feature, cuts[2])],
    ])
}

/// Two groups, each driven by its own pair of factors.
fn two_group_config(n: usize) -> SimConfig {
    let rules = ConceptRuleSet {
        groups: ["a", "b"]
            .iter()
            .map(|g| RuleGroup {
                name: g.to_string(),
                concepts: vec![
                    ConceptDefinition { name: format!("{g}_inv"), rule: ConceptRule::Any(vec![above(&format!("{g}1"), 0.5)]) },
                    ConceptDefinition { name: format!("{g}_stage"), rule: staged(&format!("{g}2"), [-0.7, 0.0, 0.7]) },
                ],
            })
            .collect(),
        unimplemented: vec![],
    };
    SimConfig {
        n_patients: n,
        visits: VisitRange { min: 3, max: 6 },
        visit_gap: 1.0,
        n_factors: 4,
        dynamics: Dynamics {
            decay: 0.95,
            process_var: 0.05,
            init_sd: 1.0,
            drift: vec![],
            drift_sd: 0.1,
            static_drift: vec![],
        },
        statics: vec![],
        bundles: vec![],
        features: vec![
            feature("a1", vec![1.0, 0.0, 0.0, 0.0], 0.2),
            feature("a2", vec![0.5, 1.0, 0.0, 0.0], 0.2),
            feature("b1", vec![0.0, 0.0, 1.0, 0.0], 0.2),
            feature("b2", vec![0.0, 0.0, 0.5, 1.0], 0.2),
            FeatureSpec { thresholds: Some(vec![0.0]), ..feature("acat", vec![1.0, 1.0, 0.0, 0.0], 0.3) },
        ],
        rules: RuleSource::Inline(rules),
        missing_rate_x: 0.0,
        missing_rate_y: 0.0,
        seed: 11,
    }
}

#[test]
fn zero_missing_rate_observes_everything() {
    let out = simulate_cohort(&two_group_config(50)).unwrap();
    for p in &out.cohort.patients {
        assert_eq!(p.x.observed_count(), p.x.rows() * p.x.cols());
        assert_eq!(p.y.observed_count(), p.y.rows() * p.y.cols());
    }
}

#[test]
fn identity_loading_reproduces_factor_paths() {
    let mut cfg = two_group_config(20);
    cfg.features = (0..4)
        .map(|i| {
            let mut l = vec![0.0; 4];
            l[i] = 1.0;
            feature(["a1", "a2", "b1", "b2"][i], l, 1e-12)
        })
        .collect();
    let out = simulate_cohort(&cfg).unwrap();
    for (p, path) in out.cohort.patients.iter().zip(&out.factors) {
        for (t, f) in path.iter().enumerate() {
            for d in 0..4 {
                assert!((p.x.get(t, d).unwrap() - f[d]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fixed_seed_is_byte_identical() {
    let mut cfg = two_group_config(80);
    cfg.missing_rate_x = 0.3;
    cfg.missing_rate_y = 0.4;
    let a = write_cohort_string(&simulate_cohort(&cfg).unwrap().cohort);
    let b = write_cohort_string(&simulate_cohort(&cfg).unwrap().cohort);
    assert_eq!(a, b);
    cfg.seed += 1;
    let c = write_cohort_string(&simulate_cohort(&cfg).unwrap().cohort);
    assert_ne!(a, c);
}

#[test]
fn categorical_features_follow_continuous_columns() {
    let out = simulate_cohort(&two_group_config(10)).unwrap();
    let s = &out.cohort.schema;
    assert_eq!((s.num_continuous(), s.num_categorical(), s.p()), (4, 1, 4));
    assert_eq!(s.feature_index("acat"), Some(4));
    for p in &out.cohort.patients {
        for t in 0..p.num_visits() {
            let v = p.x.get(t, 4).unwrap();
            assert!(v == 0.0 || v == 1.0);
        }
    }
}

#[test]
fn missingness_rates_and_first_visit_guard() {
    let cohort = simulate_cohort(&two_group_config(600)).unwrap().cohort;
    assert_eq!(apply_missingness(&cohort, 0.0, 0.0, 3).unwrap().patients, cohort.patients);

    let hidden_y = apply_missingness(&cohort, 0.0, 1.0, 3).unwrap();
    assert!(hidden_y.patients.iter().all(|p| p.y.observed_count() == 0));

    let masked = apply_missingness(&cohort, 0.3, 0.3, 3).unwrap();
    let cells: usize = cohort.patients.iter().map(|p| p.x.rows() * p.x.cols()).sum();
    assert!(cells >= 10_000, "{cells}");
    let kept: usize = masked.patients.iter().map(|p| p.x.observed_count()).sum();
    let frac = kept as f64 / cells as f64;
    assert!((frac - 0.7).abs() <= 0.02, "observed fraction {frac}");

    let all = apply_missingness(&cohort, 1.0, 0.0, 3).unwrap();
    for p in &all.patients {
        assert_eq!((0..p.x.cols()).filter(|&d| p.x.is_observed(0, d)).count(), 1);
        assert_eq!(p.x.observed_count(), 1);
    }
    assert!(apply_missingness(&cohort, 1.5, 0.0, 3).is_err());
}

#[test]
fn every_stage_occurs() {
    let out = simulate_cohort(&two_group_config(2000)).unwrap();
    for col in [1, 3] {
        let mut seen = [false; 4];
        for p in &out.cohort.patients {
            for t in 0..p.num_visits() {
                seen[p.y.get(t, col).unwrap() as usize] = true;
            }
        }
        assert_eq!(seen, [true; 4], "concept column {col}");
    }
}

fn residualize(y: &[f64], design: &[Vec<f64>]) -> Vec<f64> {
    // ordinary least squares through the normal equations
    let k = design[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (row, &v) in design.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
            a[i][k] += row[i] * v;
        }
    }
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    design.iter().zip(y).map(|(row, v)| v - row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>()).collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn disjoint_groups_are_conditionally_independent() {
    let mut cfg = two_group_config(10_000);
    cfg.visits = VisitRange { min: 1, max: 3 };
    let out = simulate_cohort(&cfg).unwrap();
    let mut design = Vec::new();
    let (mut la, mut lb, mut sa, mut sb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (p, path) in out.cohort.patients.iter().zip(&out.factors) {
        let t = p.num_visits() - 1;
        let mut row = vec![1.0];
        row.extend(&path[t]);
        design.push(row);
        la.push(p.y.get(t, 0).unwrap());
        sa.push(p.y.get(t, 1).unwrap());
        lb.push(p.y.get(t, 2).unwrap());
        sb.push(p.y.get(t, 3).unwrap());
    }
    for (a, b) in [(&la, &lb), (&sa, &sb), (&la, &sb), (&sa, &lb)] {
        let r = correlation(&residualize(a, &design), &residualize(b, &design));
        assert!(r.abs() < 0.05, "partial correlation {r}");
    }
}

#[test]
fn bundles_are_recorded() {
    let mut cfg = two_group_config(60);
    cfg.bundles = vec![
        BundleSpec { init: vec![2.0; 4], drift: vec![0.5; 4] },
        BundleSpec { init: vec![-2.0; 4], drift: vec![-0.5; 4] },
    ];
    let out = simulate_cohort(&cfg).unwrap();
    assert!(out.bundles.iter().all(|b| b.is_some()));
    let ones = out.bundles.iter().filter(|b| **b == Some(1)).count();
    assert!(ones > 10 && ones < 50);
    for (path, b) in out.factors.iter().zip(&out.bundles) {
        let sign = if *b == Some(0) { 1.0 } else { -1.0 };
        assert!(path.last().unwrap().iter().sum::<f64>() * sign > 0.0);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = two_group_config(5);
    cfg.missing_rate_x = 1.2;
    assert!(simulate_cohort(&cfg).is_err());
    let mut cfg = two_group_config(5);
    cfg.features[0].noise_sd = 0.0;
    assert!(simulate_cohort(&cfg).is_err());
    let mut cfg = two_group_config(5);
    cfg.visits = VisitRange { min: 0, max: 2 };
    assert!(simulate_cohort(&cfg).is_err());
    let mut cfg = two_group_config(5);
    cfg.features[1].loading.pop();
    assert!(simulate_cohort(&cfg).is_err());
}
