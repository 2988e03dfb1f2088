use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use super::config::{SimConfig, StaticDistribution};
use super::missing::apply_missingness;
use super::SynthError;
use crate::cohort::{
    CategoricalFeature, Cohort, ContinuousFeature, FeatureSchema, MaskedMatrix, PatientRecord, StaticField, StaticKind,
};
use crate::rng::stream;

/// A simulated cohort with its generating ground truth.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub cohort: Cohort,
    /// `patient × visit × factor` true latent paths.
    pub factors: Vec<Vec<Vec<f64>>>,
    /// Generating bundle per patient, when bundles are configured.
    pub bundles: Vec<Option<usize>>,
}

struct Simulated {
    record: PatientRecord,
    factors: Vec<Vec<f64>>,
    bundle: Option<usize>,
}

pub fn schema_for(config: &SimConfig) -> Result<FeatureSchema, SynthError> {
    let rules = config.rule_set()?;
    let continuous = config
        .features
        .iter()
        .filter(|f| !f.is_categorical())
        .map(|f| ContinuousFeature { name: f.name.clone(), unit: f.unit.clone() })
        .collect();
    let categorical = config
        .features
        .iter()
        .filter_map(|f| {
            f.thresholds.as_ref().map(|t| CategoricalFeature { name: f.name.clone(), num_classes: t.len() + 1 })
        })
        .collect();
    let statics = config
        .statics
        .iter()
        .map(|s| StaticField {
            name: s.name.clone(),
            kind: match s.distribution {
                StaticDistribution::Bernoulli { .. } => StaticKind::Binary,
                StaticDistribution::Normal { .. } => StaticKind::Continuous,
            },
        })
        .collect();
    let schema = FeatureSchema::new(continuous, categorical, rules.concept_specs(), statics);
    schema.validate().map_err(|e| SynthError::Config(e.to_string()))?;
    Ok(schema)
}

/// Draws a cohort. Labels come from the noise-free measurements, then the
/// configured missingness is applied to both `x` and `y`.
pub fn simulate_cohort(config: &SimConfig) -> Result<SimOutput, SynthError> {
    config.validate()?;
    let schema = schema_for(config)?;
    // column of each configured feature in the continuous-first layout
    let n_cont = schema.num_continuous();
    let mut columns = Vec::with_capacity(config.features.len());
    let (mut ci, mut ki) = (0, n_cont);
    for f in &config.features {
        if f.is_categorical() {
            columns.push(ki);
            ki += 1;
        } else {
            columns.push(ci);
            ci += 1;
        }
    }

    let sims: Vec<Simulated> = (0..config.n_patients)
        .into_par_iter()
        .map(|i| simulate_patient(config, &schema, &columns, i))
        .collect();

    let mut patients = Vec::with_capacity(sims.len());
    let mut factors = Vec::with_capacity(sims.len());
    let mut bundles = Vec::with_capacity(sims.len());
    for s in sims {
        patients.push(s.record);
        factors.push(s.factors);
        bundles.push(s.bundle);
    }
    let complete = Cohort::new(schema, patients);
    let cohort = apply_missingness(&complete, config.missing_rate_x, config.missing_rate_y, config.seed)?;
    Ok(SimOutput { cohort, factors, bundles })
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn simulate_patient(config: &SimConfig, schema: &FeatureSchema, columns: &[usize], index: usize) -> Simulated {
    let mut rng = stream(config.seed, "simulate", index as u64);
    let k = config.n_factors;
    let dyn_ = &config.dynamics;

    let t_len = rng.random_range(config.visits.min..=config.visits.max);
    let mut times = Vec::with_capacity(t_len);
    let mut tau = 0.0;
    for t in 0..t_len {
        if t > 0 {
            tau += config.visit_gap * rng.random_range(0.5..1.5);
        }
        times.push(tau);
    }

    let statics: Vec<f64> = config
        .statics
        .iter()
        .map(|s| match s.distribution {
            StaticDistribution::Bernoulli { p } => f64::from(u8::from(rng.random_bool(p.clamp(0.0, 1.0)))),
            StaticDistribution::Normal { mean, sd } => Normal::new(mean, sd.max(0.0)).map_or(mean, |n| n.sample(&mut rng)),
        })
        .collect();

    let bundle = (!config.bundles.is_empty()).then(|| rng.random_range(0..config.bundles.len()));
    let offsets = |pick: fn(&super::config::BundleSpec) -> &Vec<f64>, f: usize| {
        bundle.map_or(0.0, |b| pick(&config.bundles[b]).get(f).copied().unwrap_or(0.0))
    };

    let drift: Vec<f64> = (0..k)
        .map(|f| {
            let base = dyn_.drift.get(f).copied().unwrap_or(0.0);
            let from_static: f64 = dyn_
                .static_drift
                .get(f)
                .map_or(0.0, |row| row.iter().zip(&statics).map(|(w, s)| w * s).sum());
            base + from_static + offsets(|b| &b.drift, f) + dyn_.drift_sd * gaussian(&mut rng)
        })
        .collect();

    let mut state: Vec<f64> = (0..k).map(|f| offsets(|b| &b.init, f) + dyn_.init_sd * gaussian(&mut rng)).collect();
    let mut path = Vec::with_capacity(t_len);
    path.push(state.clone());
    for t in 1..t_len {
        let dt = times[t] - times[t - 1];
        for f in 0..k {
            state[f] = dyn_.decay * state[f] + drift[f] * dt + (dt * dyn_.process_var).sqrt() * gaussian(&mut rng);
        }
        path.push(state.clone());
    }

    let rules = config.rule_set().expect("validated");
    let mut x = MaskedMatrix::unobserved(t_len, schema.d());
    let mut y = MaskedMatrix::unobserved(t_len, schema.p());
    let mut clean = vec![0.0; config.features.len()];
    for (t, fac) in path.iter().enumerate() {
        for (j, spec) in config.features.iter().enumerate() {
            let score = spec.intercept + spec.loading.iter().zip(fac).map(|(l, v)| l * v).sum::<f64>();
            let noisy = score + spec.noise_sd * gaussian(&mut rng);
            let (clean_v, obs_v) = match &spec.thresholds {
                Some(th) => {
                    let class = |s: f64| th.iter().filter(|&&c| s > c).count() as f64;
                    (class(score), class(noisy))
                }
                None => match spec.clip {
                    Some((lo, hi)) => (score.clamp(lo, hi), noisy.clamp(lo, hi)),
                    None => (score, noisy),
                },
            };
            clean[j] = clean_v;
            x.set(t, columns[j], obs_v);
        }
        let labels = rules.label(|name| config.features.iter().position(|f| f.name == name).map(|j| clean[j]));
        for (p, l) in labels.into_iter().enumerate() {
            if let Some(c) = l {
                y.set(t, p, c as f64);
            }
        }
    }

    Simulated {
        record: PatientRecord { id: format!("P{index:05}"), static_s: statics, times, x, y, meds: None },
        factors: path,
        bundle,
    }
}
