//! Built-in numerical checks: gradients, KL, mask handling, DTW and the
//! latent restriction of the guidance heads.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cluster::dtw_distance;
use crate::cohort::{
    CategoricalFeature, Cohort, ConceptSpec, ContinuousFeature, FeatureSchema, MaskedMatrix, PatientRecord,
    StaticField, StaticKind,
};
use crate::inference::{draw_noise, elbo_on_tape, kl_diag_gaussian, patient_objective, KStrategy, LossWeights, ObjectiveSpec};
use crate::kernel::{finite_difference_check, KernelError, Tape, Tensor};
use crate::model::{InitOptions, Model, ModelConfig, Widths};
use crate::rng::stream;

#[derive(Debug, thiserror::Error)]
pub enum SelftestError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Inference(#[from] crate::inference::InferenceError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Cluster(#[from] crate::cluster::ClusterError),
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Small schema: 2 continuous + 2 categorical features, one concept in each
/// of two groups, one static covariate.
pub fn toy_schema() -> FeatureSchema {
    let cont = |n: &str| ContinuousFeature { name: n.into(), unit: String::new() };
    FeatureSchema::new(
        vec![cont("c0"), cont("c1")],
        vec![
            CategoricalFeature { name: "k0".into(), num_classes: 2 },
            CategoricalFeature { name: "k1".into(), num_classes: 3 },
        ],
        vec![
            ConceptSpec { name: "a_involvement".into(), num_classes: 2, group: "a".into() },
            ConceptSpec { name: "b_stage".into(), num_classes: 3, group: "b".into() },
        ],
        vec![StaticField { name: "s0".into(), kind: StaticKind::Continuous }],
    )
}

/// Random record on `schema` with iid missingness at `missing`. The first
/// visit keeps its first feature observed.
pub fn toy_record(rng: &mut impl Rng, schema: &FeatureSchema, id: usize, t_len: usize, missing: f64) -> PatientRecord {
    let d = schema.d();
    let g = schema.num_continuous();
    let mut times = vec![0.0];
    for _ in 1..t_len {
        times.push(times.last().unwrap() + rng.random_range(0.3..1.7));
    }
    let mut x = MaskedMatrix::unobserved(t_len, d);
    let mut y = MaskedMatrix::unobserved(t_len, schema.p());
    for t in 0..t_len {
        for j in 0..d {
            let keep = (t == 0 && j == 0) || rng.random::<f64>() >= missing;
            let v = if j < g {
                StandardNormal.sample(rng)
            } else {
                rng.random_range(0..schema.categorical_features[j - g].num_classes) as f64
            };
            if keep {
                x.set(t, j, v);
            }
        }
        for (p, c) in schema.concepts.iter().enumerate() {
            if rng.random::<f64>() >= missing {
                y.set(t, p, rng.random_range(0..c.num_classes) as f64);
            }
        }
    }
    let static_s = (0..schema.s()).map(|_| StandardNormal.sample(rng)).collect();
    PatientRecord { id: format!("T{id:03}"), static_s, times, x, y, meds: None }
}

pub fn toy_cohort(seed: u64, n: usize, t_len: usize, missing: f64) -> Cohort {
    let schema = toy_schema();
    let mut rng = stream(seed, "toy-cohort", 0);
    let patients = (0..n).map(|i| toy_record(&mut rng, &schema, i, t_len, missing)).collect();
    Cohort::new(schema, patients)
}

fn small_config(latent: usize, width: usize) -> ModelConfig {
    let mut c = ModelConfig::new(latent);
    c.widths = Widths { recurrent: width, dense: width, likelihood: width, guidance: width, prior: width };
    c
}

fn random_model(schema: &FeatureSchema, latent: usize, width: usize, seed: u64) -> Result<Model, SelftestError> {
    Ok(Model::with_options(&small_config(latent, width), schema, seed, InitOptions { random_outputs: true })?)
}

/// Worst relative gap between reverse-mode and central-difference gradients
/// of the summed bound over every horizon of two short patients.
pub fn gradient_check(seed: u64) -> Result<f64, SelftestError> {
    let cohort = toy_cohort(seed, 2, 3, 0.3);
    let model = random_model(&cohort.schema, 4, 6, seed)?;
    let weights = LossWeights { alpha: 1.0, beta: 1.0, mc_samples: 2 };
    let tensors: Vec<_> = cohort.patients.iter().map(|r| model.tensors(r)).collect();
    let mut rng = stream(seed, "gradcheck-noise", 0);
    let noise: Vec<Vec<Vec<Tensor>>> = tensors
        .iter()
        .map(|pt| (0..=pt.num_visits()).map(|_| draw_noise(&mut rng, 2, pt.num_visits(), 4)).collect())
        .collect();
    let err = finite_difference_check(model.params(), 1e-6, |tape: &mut Tape| {
        let mut terms = Vec::new();
        for (pt, eps) in tensors.iter().zip(&noise) {
            let prior = model.prior(tape, pt).map_err(to_kernel)?;
            let states = model.encoder_states(tape, pt, pt.num_visits()).map_err(to_kernel)?;
            for k in 0..=pt.num_visits() {
                let (v, _) = elbo_on_tape(tape, &model, pt, states[k], &prior, k, &weights, &eps[k], None)
                    .map_err(|e| KernelError::Contract(e.to_string()))?;
                terms.push(v);
            }
        }
        tape.add_all(&terms)
    })?;
    Ok(err)
}

fn to_kernel(e: crate::model::ModelError) -> KernelError {
    KernelError::Contract(e.to_string())
}

/// Largest `|analytic − MC| / se` over random diagonal Gaussian pairs.
pub fn kl_monte_carlo(seed: u64, pairs: usize, draws: usize) -> f64 {
    let mut rng = stream(seed, "kl-mc", 0);
    let dim = 3;
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let mut gen = |lo: f64, hi: f64| (0..dim).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
        let (qm, qs, pm, ps) = (gen(-1.0, 1.0), gen(0.5, 1.5), gen(-1.0, 1.0), gen(0.5, 1.5));
        let analytic = kl_diag_gaussian(&qm, &qs, &pm, &ps);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let mut log_ratio = 0.0;
            for j in 0..dim {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = qm[j] + qs[j] * e;
                let u = (z - pm[j]) / ps[j];
                log_ratio += -0.5 * e * e - qs[j].ln() + 0.5 * u * u + ps[j].ln();
            }
            sum += log_ratio;
            sq += log_ratio * log_ratio;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sq / n - mean * mean) * n / (n - 1.0)).sqrt() / n.sqrt();
        worst = worst.max((analytic - mean).abs() / se);
    }
    worst
}

/// Overwrites `cells` randomly chosen masked entries (features and concept
/// labels) and counts loss terms or gradients that moved.
pub fn mask_invariance(seed: u64, cells: usize) -> Result<usize, SelftestError> {
    let cohort = toy_cohort(seed, 40, 6, 0.45);
    let model = random_model(&cohort.schema, 4, 8, seed)?;
    let mut masked = Vec::new();
    for (i, r) in cohort.patients.iter().enumerate() {
        for t in 0..r.num_visits() {
            masked.extend((0..r.x.cols()).filter(|&d| !r.x.is_observed(t, d)).map(|d| (i, t, d, false)));
            masked.extend((0..r.y.cols()).filter(|&p| !r.y.is_observed(t, p)).map(|p| (i, t, p, true)));
        }
    }
    let mut rng = stream(seed, "mask-flip", 0);
    let picks = rand::seq::index::sample(&mut rng, masked.len(), cells.min(masked.len()));
    let mut flipped = cohort.clone();
    let normal = Normal::new(0.0, 100.0).expect("valid normal");
    for idx in picks {
        let (i, t, c, is_y) = masked[idx];
        let r = &mut flipped.patients[i];
        let m = if is_y { &mut r.y } else { &mut r.x };
        let v = if !is_y && c < cohort.schema.num_continuous() { normal.sample(&mut rng) } else { rng.random_range(0..5) as f64 };
        m.set_hidden_value(t, c, v);
    }
    let spec = ObjectiveSpec {
        weights: LossWeights { alpha: 0.2, beta: 0.01, mc_samples: 1 },
        strategy: KStrategy::All,
        stage: "mask-invariance",
        seed,
        dropout: true,
    };
    let mut moved = 0;
    for (i, (a, b)) in cohort.patients.iter().zip(&flipped.patients).enumerate() {
        let (la, ga) = patient_objective(&model, model.params(), &model.tensors(a), i as u64, &spec, true)?;
        let (lb, gb) = patient_objective(&model, model.params(), &model.tensors(b), i as u64, &spec, true)?;
        let terms = |l: &crate::inference::LossBreakdown| [l.recon_cont, l.recon_cat, l.guidance, l.kl, l.total];
        moved += terms(&la).iter().zip(terms(&lb).iter()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        let (fa, fb) = (ga.expect("grads").flat(), gb.expect("grads").flat());
        moved += fa.iter().zip(&fb).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    }
    Ok(moved)
}

/// Random sequence pairs where the DP disagrees with full path enumeration.
pub fn dtw_oracle(seed: u64, pairs: usize) -> Result<usize, SelftestError> {
    fn enumerate(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let mut s = 0.0;
        for (x, y) in a[i].iter().zip(&b[j]) {
            s += (x - y) * (x - y);
        }
        let acc = acc + s.sqrt();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            enumerate(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            enumerate(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            enumerate(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut rng = stream(seed, "dtw-oracle", 0);
    let mut bad = 0;
    for _ in 0..pairs {
        let dim = rng.random_range(1..=3);
        let seq = |rng: &mut rand_chacha::ChaCha8Rng| {
            let n = rng.random_range(1..=6);
            (0..n).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect::<Vec<Vec<f64>>>()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let mut best = f64::INFINITY;
        enumerate(&a, &b, 0, 0, 0.0, &mut best);
        if dtw_distance(&a, &b, None)? != best {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Largest gradient reaching a latent column outside a group's own block
/// from that group's concept probabilities, over `inputs` random `z`.
pub fn guidance_leakage(seed: u64, inputs: usize) -> Result<f64, SelftestError> {
    let cohort = toy_cohort(seed, 1, 4, 0.0);
    // 7 columns over two groups leaves one column unguided
    let model = random_model(&cohort.schema, 7, 10, seed)?;
    let pt = model.tensors(&cohort.patients[0]);
    let t_len = pt.num_visits();
    let l = model.latent_dim();
    let mut rng = stream(seed, "leakage", 0);
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let z: Vec<f64> = (0..t_len * l).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        for grp in &model.config().partition().groups {
            let mut tape = Tape::new(model.params());
            let zv = tape.input(Tensor::matrix(t_len, l, z.clone())?)?;
            let probs = model.guide(&mut tape, zv, &pt, None)?;
            let mut terms = Vec::new();
            for &c in &grp.concepts {
                let p = probs[c].expect("guided concept");
                let shape = tape.value(p).shape().to_vec();
                let n: usize = shape.iter().product();
                let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                let wv = tape.input(w)?;
                let prod = tape.mul(p, wv)?;
                terms.push(tape.sum(prod)?);
            }
            let loss = tape.add_all(&terms)?;
            let grad = tape.backward_all(loss)?.of(zv, t_len * l);
            for (i, g) in grad.iter().enumerate() {
                if !grp.latent.contains(&(i % l)) {
                    worst = worst.max(g.abs());
                }
            }
        }
    }
    Ok(worst)
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String), SelftestError>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteResult { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs every suite with the default sizes.
pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    vec![
        timed("gradient-check", || {
            let e = gradient_check(seed)?;
            Ok((e < 1e-3, format!("max relative error {e:.3e}")))
        }),
        timed("kl-monte-carlo", || {
            let z = kl_monte_carlo(seed, 50, 1_000_000);
            Ok((z <= 3.0, format!("max |analytic - mc| / se = {z:.3}")))
        }),
        timed("mask-invariance", || {
            let moved = mask_invariance(seed, 1000)?;
            Ok((moved == 0, format!("{moved} values changed")))
        }),
        timed("dtw-oracle", || {
            let bad = dtw_oracle(seed, 500)?;
            Ok((bad == 0, format!("{bad} of 500 pairs differ")))
        }),
        timed("guidance-leakage", || {
            let g = guidance_leakage(seed, 100)?;
            Ok((g == 0.0, format!("max off-block gradient {g:e}")))
        }),
    ]
}
