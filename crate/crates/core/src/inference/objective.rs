use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::kernel::{Gradients, ParamStore, Tape, Tensor, Var};
use crate::model::{Gaussian, Model, PatientTensors};
use crate::rng::stream;

/// Which encoder horizons `k` enter the objective for each patient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KStrategy {
    All,
    /// `n` distinct values per patient per epoch, rescaled by `(T+1)/n`.
    Subsample(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub mc_samples: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.01, mc_samples: 1 }
    }
}

/// Terms of the negative bound, summed over whatever was evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_cont: f64,
    pub recon_cat: f64,
    pub guidance: f64,
    pub kl: f64,
    pub total: f64,
    pub observed_cont: usize,
    pub observed_cat: usize,
    pub observed_concepts: usize,
    /// Number of `L_k` evaluations folded in.
    pub evaluations: usize,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, w: f64) {
        self.recon_cont += w * o.recon_cont;
        self.recon_cat += w * o.recon_cat;
        self.guidance += w * o.guidance;
        self.kl += w * o.kl;
        self.total += w * o.total;
        self.observed_cont += o.observed_cont;
        self.observed_cat += o.observed_cat;
        self.observed_concepts += o.observed_concepts;
        self.evaluations += o.evaluations;
    }

    pub fn accumulate(&mut self, o: &LossBreakdown) {
        self.add_scaled(o, 1.0);
    }
}

/// Standard normal draws shaped like `z`, one tensor per MC sample.
pub fn draw_noise(rng: &mut impl Rng, samples: usize, t_len: usize, latent: usize) -> Vec<Tensor> {
    (0..samples)
        .map(|_| {
            let data = (0..t_len * latent).map(|_| StandardNormal.sample(rng)).collect();
            Tensor::matrix(t_len, latent, data).expect("noise shape")
        })
        .collect()
}

/// Builds `L_k` on `tape` given the encoder state after `k` visits and the
/// prior. Returns the total node and its value breakdown.
#[allow(clippy::too_many_arguments)]
pub fn elbo_on_tape(
    tape: &mut Tape,
    model: &Model,
    pt: &PatientTensors,
    h_k: Var,
    prior: &Gaussian,
    k: usize,
    weights: &LossWeights,
    noise: &[Tensor],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, LossBreakdown), InferenceError> {
    let probabilistic = model.config().probabilistic;
    let post = model.posterior(tape, pt, h_k, k, rng.as_deref_mut())?;
    let draws: Vec<Option<Tensor>> = if probabilistic {
        if noise.is_empty() {
            return Err(InferenceError::Contract("at least one noise draw is required".into()));
        }
        noise.iter().cloned().map(Some).collect()
    } else {
        vec![None]
    };
    let inv_s = 1.0 / draws.len() as f64;
    let mut cont_terms = Vec::new();
    let mut cat_terms = Vec::new();
    let mut guide_terms = Vec::new();
    let mut b = LossBreakdown { evaluations: 1, ..Default::default() };
    for eps in draws {
        let z = Model::reparameterize(tape, &post, eps)?;
        let dec = model.decode(tape, z, pt, rng.as_deref_mut())?;
        cont_terms.push(tape.gaussian_nll(&pt.cont, &pt.cont_mask, dec.cont_mean, dec.cont_sd)?);
        for (probs, col) in dec.cat_probs.iter().zip(&pt.cat) {
            cat_terms.push(tape.categorical_ce(*probs, &col.labels, &col.mask)?);
        }
        if weights.alpha > 0.0 {
            let guided = model.guide(tape, z, pt, rng.as_deref_mut())?;
            for (probs, col) in guided.iter().zip(&pt.concepts) {
                if let Some(p) = probs {
                    guide_terms.push(tape.categorical_ce(*p, &col.labels, &col.mask)?);
                }
            }
        }
    }
    b.observed_cont = pt.cont_mask.iter().filter(|&&m| m).count();
    b.observed_cat = pt.cat.iter().map(|c| c.mask.iter().filter(|&&m| m).count()).sum();
    b.observed_concepts = pt.concepts.iter().map(|c| c.mask.iter().filter(|&&m| m).count()).sum();

    let mut parts = Vec::new();
    let mut avg = |tape: &mut Tape, terms: &[Var], w: f64| -> Result<Option<(Var, f64)>, InferenceError> {
        if terms.is_empty() {
            return Ok(None);
        }
        let s = tape.add_all(terms)?;
        let value = tape.value(s).item() * inv_s;
        let v = tape.scale(s, inv_s * w)?;
        parts.push(v);
        Ok(Some((v, value)))
    };
    b.recon_cont = avg(tape, &cont_terms, 1.0)?.map_or(0.0, |x| x.1);
    b.recon_cat = avg(tape, &cat_terms, 1.0)?.map_or(0.0, |x| x.1);
    b.guidance = avg(tape, &guide_terms, weights.alpha)?.map_or(0.0, |x| x.1);
    if probabilistic && weights.beta > 0.0 {
        let kl = tape.kl_diag(post.mean, post.sd, prior.mean, prior.sd)?;
        b.kl = tape.value(kl).item();
        parts.push(tape.scale(kl, weights.beta)?);
    } else if probabilistic {
        // still reported, just not optimized
        b.kl = crate::kernel::kl_diag_value(
            tape.value(post.mean).data(),
            tape.value(post.sd).data(),
            tape.value(prior.mean).data(),
            tape.value(prior.sd).data(),
        );
    }
    let total = tape.add_all(&parts)?;
    b.total = tape.value(total).item();
    Ok((total, b))
}

/// `L_k` for one patient with dropout off.
pub fn elbo_loss(
    model: &Model,
    pt: &PatientTensors,
    k: usize,
    weights: &LossWeights,
    noise: &[Tensor],
) -> Result<LossBreakdown, InferenceError> {
    if k > pt.num_visits() {
        return Err(InferenceError::Contract(format!("k = {k} exceeds T = {}", pt.num_visits())));
    }
    let mut tape = Tape::new(model.params());
    let prior = model.prior(&mut tape, pt)?;
    let states = model.encoder_states(&mut tape, pt, k)?;
    let (_, b) = elbo_on_tape(&mut tape, model, pt, states[k], &prior, k, weights, noise, None)?;
    Ok(b)
}

/// The horizons evaluated for a patient with `t_len` visits and their weight.
pub fn choose_ks(strategy: KStrategy, t_len: usize, rng: &mut impl Rng) -> (Vec<usize>, f64) {
    match strategy {
        KStrategy::All => ((0..=t_len).collect(), 1.0),
        KStrategy::Subsample(n) => {
            let n = n.clamp(1, t_len + 1);
            let mut ks = sample(rng, t_len + 1, n).into_vec();
            ks.sort_unstable();
            (ks, (t_len + 1) as f64 / n as f64)
        }
    }
}

/// How noise and dropout are drawn for one objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveSpec<'a> {
    pub weights: LossWeights,
    pub strategy: KStrategy,
    /// Stream label; the same label and seed reproduce the same noise.
    pub stage: &'a str,
    pub seed: u64,
    pub dropout: bool,
}

/// One patient's weighted objective and its gradient.
pub fn patient_objective(
    model: &Model,
    params: &ParamStore,
    pt: &PatientTensors,
    index: u64,
    spec: &ObjectiveSpec,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>), InferenceError> {
    let mut rng = stream(spec.seed, spec.stage, index);
    let t_len = pt.num_visits();
    let (ks, w) = choose_ks(spec.strategy, t_len, &mut rng);
    let mut tape = Tape::new(params);
    let prior = model.prior(&mut tape, pt)?;
    let k_max = *ks.last().expect("at least one horizon");
    let states = model.encoder_states(&mut tape, pt, k_max)?;
    let mut totals = Vec::with_capacity(ks.len());
    let mut b = LossBreakdown::default();
    for &k in &ks {
        let noise = draw_noise(&mut rng, spec.weights.mc_samples.max(1), t_len, model.latent_dim());
        let drop_rng = if spec.dropout { Some(&mut rng) } else { None };
        let (total, bk) = elbo_on_tape(&mut tape, model, pt, states[k], &prior, k, &spec.weights, &noise, drop_rng)?;
        totals.push(total);
        b.add_scaled(&bk, w);
    }
    let sum = tape.add_all(&totals)?;
    let loss = tape.scale(sum, w)?;
    let grads = if want_grad { Some(tape.backward(loss)?) } else { None };
    Ok((b, grads))
}

/// `Σ_i Σ_k L_k` over `patients` with gradients. Patients are evaluated in
/// parallel and reduced in index order, so the result does not depend on
/// the thread count. `indices` are the stream indices of the patients.
pub fn cohort_objective(
    model: &Model,
    patients: &[&PatientTensors],
    indices: &[u64],
    spec: &ObjectiveSpec,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>), InferenceError> {
    if patients.is_empty() {
        return Err(InferenceError::EmptyCohort);
    }
    let params = model.params();
    let results: Vec<Result<(LossBreakdown, Option<Gradients>), InferenceError>> = patients
        .par_iter()
        .zip(indices.par_iter())
        .map(|(pt, &i)| patient_objective(model, params, pt, i, spec, want_grad))
        .collect();
    let mut total = LossBreakdown::default();
    let mut grads = want_grad.then(|| Gradients::zeros_like(params));
    for r in results {
        let (b, g) = r?;
        total.accumulate(&b);
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.accumulate(&g);
        }
    }
    Ok((total, grads))
}
