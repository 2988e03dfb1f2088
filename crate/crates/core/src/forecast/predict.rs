use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::inference::draw_noise;
use crate::kernel::{Tape, Tensor};
use crate::model::{Model, PatientTensors};

/// How 95% intervals are formed from predictive draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    /// mean ± 1.96·sd of the draws
    #[default]
    Gaussian,
    /// 2.5% and 97.5% empirical quantiles
    Quantile,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-stage Monte-Carlo predictive distribution for one patient.
#[derive(Clone, Debug)]
pub struct PredictiveSamples {
    pub k: usize,
    /// `S` latent draws, each `T × L`.
    pub z_draws: Vec<Tensor>,
    /// `S·U` observation draws, each `T × D` in the continuous-first layout.
    pub x_draws: Vec<Tensor>,
    /// Mean over z draws of the decoded continuous means, `T × G`.
    pub decoded_mean: Tensor,
    /// Per categorical feature, `T × K` probabilities averaged over z draws.
    pub cat_probs: Vec<Tensor>,
    /// Per concept, `T × K` guidance probabilities averaged over z draws;
    /// `None` for unguided concepts.
    pub y_probs: Vec<Option<Tensor>>,
    /// `T × G` summaries of the continuous draws, row-major.
    pub cont_summary: Vec<CellSummary>,
}

fn sample_class(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    probs.len() - 1
}

fn mean_tensors(parts: &[Tensor]) -> Tensor {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        for (o, v) in out.data_mut().iter_mut().zip(p.data()) {
            *o += v;
        }
    }
    let n = parts.len() as f64;
    out.map(|v| v / n)
}

fn summarize(values: &mut [f64], mode: IntervalMode) -> CellSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let (lower, upper) = match mode {
        IntervalMode::Gaussian => (mean - 1.96 * sd, mean + 1.96 * sd),
        IntervalMode::Quantile => {
            values.sort_by(f64::total_cmp);
            (quantile(values, 0.025), quantile(values, 0.975))
        }
    };
    CellSummary { mean, sd, lower, upper }
}

/// Linear interpolation between order statistics of sorted `v`.
fn quantile(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Draws `samples` latent trajectories from the posterior after `k` visits
/// and `obs_samples` observations per trajectory. Only the first `k` visits
/// of `pt` are read.
pub fn predict(
    model: &Model,
    pt: &PatientTensors,
    k: usize,
    samples: usize,
    obs_samples: usize,
    mode: IntervalMode,
    rng: &mut impl Rng,
) -> Result<PredictiveSamples, ForecastError> {
    let t_len = pt.num_visits();
    if k > t_len {
        return Err(ForecastError::Contract(format!("k = {k} exceeds T = {t_len}")));
    }
    if samples == 0 || obs_samples == 0 {
        return Err(ForecastError::Contract("sample counts must be positive".into()));
    }
    let schema = model.schema();
    let g = schema.num_continuous();
    let d = schema.d();
    let l = model.latent_dim();
    let visible = pt.observed_prefix(k);

    let mut tape = Tape::new(model.params());
    let states = model.encoder_states(&mut tape, &visible, k)?;
    let post = model.posterior(&mut tape, &visible, states[k], k, None)?;
    let noise = if model.config().probabilistic { draw_noise(rng, samples, t_len, l) } else { Vec::new() };

    let mut z_draws = Vec::with_capacity(samples);
    let mut x_draws = Vec::with_capacity(samples * obs_samples);
    let mut dec_means = Vec::with_capacity(samples);
    let mut cat_parts: Vec<Vec<Tensor>> = vec![Vec::with_capacity(samples); schema.num_categorical()];
    let mut y_parts: Vec<Vec<Tensor>> = vec![Vec::with_capacity(samples); schema.p()];
    for s in 0..samples {
        let z = Model::reparameterize(&mut tape, &post, noise.get(s).cloned())?;
        let dec = model.decode(&mut tape, z, &visible, None)?;
        let guided = model.guide(&mut tape, z, &visible, None)?;
        z_draws.push(tape.value(z).clone());
        let mean = tape.value(dec.cont_mean).clone();
        let sd = tape.value(dec.cont_sd).clone();
        let cats: Vec<Tensor> = dec.cat_probs.iter().map(|&p| tape.value(p).clone()).collect();
        for _ in 0..obs_samples {
            let mut x = vec![0.0; t_len * d];
            for t in 0..t_len {
                for j in 0..g {
                    let e: f64 = StandardNormal.sample(rng);
                    x[t * d + j] = mean.get(t, j) + sd.get(t, j) * e;
                }
                for (j, p) in cats.iter().enumerate() {
                    x[t * d + g + j] = sample_class(rng, p.row(t)) as f64;
                }
            }
            x_draws.push(Tensor::matrix(t_len, d, x)?);
        }
        dec_means.push(mean);
        for (acc, p) in cat_parts.iter_mut().zip(cats) {
            acc.push(p);
        }
        for (acc, p) in y_parts.iter_mut().zip(&guided) {
            if let Some(p) = p {
                acc.push(tape.value(*p).clone());
            }
        }
    }

    let mut cont_summary = Vec::with_capacity(t_len * g);
    let mut buf = vec![0.0; x_draws.len()];
    for t in 0..t_len {
        for j in 0..g {
            for (b, x) in buf.iter_mut().zip(&x_draws) {
                *b = x.get(t, j);
            }
            cont_summary.push(summarize(&mut buf, mode));
        }
    }
    Ok(PredictiveSamples {
        k,
        z_draws,
        x_draws,
        decoded_mean: mean_tensors(&dec_means),
        cat_probs: cat_parts.iter().map(|p| mean_tensors(p)).collect(),
        y_probs: y_parts.iter().map(|p| (!p.is_empty()).then(|| mean_tensors(p))).collect(),
        cont_summary,
    })
}

/// Horizon-independent posterior mean trajectory after all visits.
pub fn posterior_mean(model: &Model, pt: &PatientTensors, k: usize) -> Result<Tensor, ForecastError> {
    let visible = pt.observed_prefix(k);
    let mut tape = Tape::new(model.params());
    let states = model.encoder_states(&mut tape, &visible, k)?;
    let post = model.posterior(&mut tape, &visible, states[k], k, None)?;
    Ok(tape.value(post.mean).clone())
}
