use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::inputs::{encoder_input_dim, PatientTensors};
use super::ModelError;
use crate::cohort::FeatureSchema;
use crate::kernel::{dropout, lstm_step, LstmWeights, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::stream;

/// Lower bound added to every emitted standard deviation.
pub const SD_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct GuideLayout {
    hidden: Dense,
    outs: Vec<Dense>,
}

#[derive(Clone, Debug)]
struct Layout {
    lstm: (ParamId, ParamId, ParamId),
    post_h: ParamId,
    post_c: Dense,
    post_2: Dense,
    post_out: Dense,
    prior_1: Dense,
    prior_out: Dense,
    dec_mean_1: Dense,
    dec_mean_out: Dense,
    dec_sd: Option<(Dense, Dense)>,
    guide: Vec<GuideLayout>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct InitOptions {
    /// Random instead of zero output layers; used to exercise every path in
    /// gradient checks.
    pub random_outputs: bool,
}

/// Mean and standard deviation nodes of a factorized Gaussian.
#[derive(Clone, Copy, Debug)]
pub struct Gaussian {
    pub mean: Var,
    pub sd: Var,
}

/// Likelihood parameters for all visits.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// `T × G`.
    pub cont_mean: Var,
    pub cont_sd: Var,
    /// One `T × K` probability node per categorical feature.
    pub cat_probs: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    schema: FeatureSchema,
    params: ParamStore,
    layout: Layout,
}

struct Builder<'a> {
    store: ParamStore,
    rng: ChaCha8Rng,
    opts: &'a InitOptions,
}

impl Builder<'_> {
    fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data).expect("init shape"))
    }

    fn bias(&mut self, name: &str, n: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(&[n]))
    }

    fn hidden(&mut self, name: &str, out: usize, fan_in: usize) -> Dense {
        let w = self.uniform(&format!("{name}.w"), out, fan_in, (6.0 / fan_in as f64).sqrt());
        Dense { w, b: self.bias(&format!("{name}.b"), out) }
    }

    fn output(&mut self, name: &str, out: usize, fan_in: usize) -> Dense {
        let w = if self.opts.random_outputs {
            self.uniform(&format!("{name}.w"), out, fan_in, (6.0 / (fan_in + out) as f64).sqrt())
        } else {
            self.store.add(format!("{name}.w"), Tensor::zeros(&[out, fan_in]))
        };
        let b = if self.opts.random_outputs {
            let data = (0..out).map(|_| self.rng.random_range(-0.5..=0.5)).collect();
            self.store.add(format!("{name}.b"), Tensor::vector(data))
        } else {
            self.bias(&format!("{name}.b"), out)
        };
        Dense { w, b }
    }
}

fn build(config: &ModelConfig, schema: &FeatureSchema, seed: u64, opts: &InitOptions) -> (ParamStore, Layout) {
    let mut b = Builder { store: ParamStore::new(), rng: stream(seed, "init", 0), opts };
    let w = &config.widths;
    let l = config.latent_dim;
    let s = schema.s();
    let g = schema.num_continuous();
    let k_total: usize = schema.categorical_features.iter().map(|c| c.num_classes).sum();
    let h = w.recurrent;
    let input = encoder_input_dim(schema);

    let bound = 1.0 / (h as f64).sqrt();
    let wx = b.uniform("enc.lstm.w_x", 4 * h, input, bound);
    let wh = b.uniform("enc.lstm.w_h", 4 * h, h, bound);
    // forget gate starts open
    let mut bias = vec![0.0; 4 * h];
    bias[h..2 * h].fill(1.0);
    let lb = b.store.add("enc.lstm.b", Tensor::vector(bias));

    let post_h = b.uniform("enc.dense1.w_h", w.dense, h, (6.0 / (h + 2 + s) as f64).sqrt());
    let post_c = b.hidden("enc.dense1.ctx", w.dense, 2 + s);
    let post_2 = b.hidden("enc.dense2", w.dense, w.dense);
    let post_out = b.output("enc.out", 2 * l, w.dense);

    let prior_1 = b.hidden("prior.dense", w.prior, 1 + s);
    let prior_out = b.output("prior.out", 2 * l, w.prior);

    let dec_in = l + 1 + s;
    let dec_mean_1 = b.hidden("dec.mean.dense", w.likelihood, dec_in);
    let dec_mean_out = b.output("dec.mean.out", g + k_total, w.likelihood);
    let dec_sd = config.learn_sigma.then(|| {
        let d1 = b.hidden("dec.sd.dense", w.likelihood, dec_in);
        (d1, b.output("dec.sd.out", g, w.likelihood))
    });

    let guide = config
        .partition()
        .groups
        .iter()
        .map(|grp| {
            let fan_in = grp.latent.len() + if config.guidance_context { 1 + s } else { 0 };
            let hidden = b.hidden(&format!("guide.{}.dense", grp.name), w.guidance, fan_in);
            let outs = grp
                .concepts
                .iter()
                .map(|&c| b.output(&format!("guide.{}.{}", grp.name, schema.concepts[c].name), schema.concepts[c].num_classes, w.guidance))
                .collect();
            GuideLayout { hidden, outs }
        })
        .collect();

    let layout = Layout {
        lstm: (wx, wh, lb),
        post_h,
        post_c,
        post_2,
        post_out,
        prior_1,
        prior_out,
        dec_mean_1,
        dec_mean_out,
        dec_sd,
        guide,
    };
    (b.store, layout)
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn new(config: &ModelConfig, schema: &FeatureSchema, seed: u64) -> Result<Self, ModelError> {
        Self::with_options(config, schema, seed, InitOptions::default())
    }

    pub fn with_options(
        config: &ModelConfig,
        schema: &FeatureSchema,
        seed: u64,
        opts: InitOptions,
    ) -> Result<Self, ModelError> {
        let config = config.resolve(schema)?;
        let (params, layout) = build(&config, schema, seed, &opts);
        Ok(Self { config, schema: schema.clone(), params, layout })
    }

    /// Rebuilds a model around stored parameters, checking their layout.
    pub fn from_parts(config: &ModelConfig, schema: &FeatureSchema, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Self::new(config, schema, 0)?;
        model
            .params
            .check_layout(&params)
            .map_err(|e| ModelError::Checkpoint(format!("parameters do not fit the config: {e}")))?;
        if !params.is_finite() {
            return Err(ModelError::Checkpoint("non-finite parameters".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn tensors(&self, record: &crate::cohort::PatientRecord) -> PatientTensors {
        PatientTensors::new(record, &self.schema, self.config.time_scale)
    }

    fn dense(tape: &mut Tape, d: Dense, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (tape.param(d.w), tape.param(d.b));
        Ok(tape.affine(w, Some(b), x)?)
    }

    fn hidden_layer(&self, tape: &mut Tape, d: Dense, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var, ModelError> {
        let a = Self::dense(tape, d, x)?;
        let a = tape.relu(a)?;
        Ok(dropout(tape, a, self.config.dropout, rng)?)
    }

    /// Splits a `T × 2L` output into mean and floored softplus sd.
    fn gaussian_head(&self, tape: &mut Tape, out: Var) -> Result<Gaussian, ModelError> {
        let l = self.config.latent_dim;
        let mean = tape.slice_cols(out, 0, l)?;
        let raw = tape.slice_cols(out, l, 2 * l)?;
        let sd = tape.softplus(raw)?;
        let sd = tape.add_scalar(sd, SD_FLOOR)?;
        Ok(Gaussian { mean, sd })
    }

    /// `p(z_t | c_t)` for every visit.
    pub fn prior(&self, tape: &mut Tape, pt: &PatientTensors) -> Result<Gaussian, ModelError> {
        let c = tape.input(pt.ctx.clone())?;
        let h = self.hidden_layer(tape, self.layout.prior_1, c, None)?;
        let out = Self::dense(tape, self.layout.prior_out, h)?;
        self.gaussian_head(tape, out)
    }

    /// Recurrent states after `0..=k_max` visits; entry 0 is the zero state.
    pub fn encoder_states(&self, tape: &mut Tape, pt: &PatientTensors, k_max: usize) -> Result<Vec<Var>, ModelError> {
        if k_max > pt.enc_rows.len() {
            return Err(ModelError::Contract(format!(
                "encoder asked for {k_max} visits but only {} are available",
                pt.enc_rows.len()
            )));
        }
        let hw = self.config.widths.recurrent;
        let (wx, wh, b) = self.layout.lstm;
        let weights = LstmWeights { w_x: tape.param(wx), w_h: tape.param(wh), b: tape.param(b) };
        let mut h = tape.input(Tensor::zeros(&[hw]))?;
        let mut c = h;
        let mut states = Vec::with_capacity(k_max + 1);
        states.push(h);
        for row in &pt.enc_rows[..k_max] {
            let x = tape.input(row.clone())?;
            (h, c) = lstm_step(tape, weights, x, h, c)?;
            states.push(h);
        }
        Ok(states)
    }

    /// `q(z_{1:T} | x_{0:k}, c)` from the state after `k` visits. In
    /// deterministic mode the sd node is exactly zero.
    pub fn posterior(
        &self,
        tape: &mut Tape,
        pt: &PatientTensors,
        h_k: Var,
        k: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Gaussian, ModelError> {
        if k > pt.num_visits() {
            return Err(ModelError::Contract(format!("k = {k} exceeds T = {}", pt.num_visits())));
        }
        let ctx = tape.input(pt.posterior_context(k))?;
        let from_ctx = Self::dense(tape, self.layout.post_c, ctx)?;
        let wh = tape.param(self.layout.post_h);
        let from_h = tape.affine(wh, None, h_k)?;
        let a = tape.add_row_broadcast(from_ctx, from_h)?;
        let a = tape.relu(a)?;
        let a = dropout(tape, a, self.config.dropout, rng.as_deref_mut())?;
        let a = self.hidden_layer(tape, self.layout.post_2, a, rng)?;
        let out = Self::dense(tape, self.layout.post_out, a)?;
        if self.config.probabilistic {
            self.gaussian_head(tape, out)
        } else {
            let mean = tape.slice_cols(out, 0, self.config.latent_dim)?;
            let sd = tape.input(Tensor::zeros(&[pt.num_visits(), self.config.latent_dim]))?;
            Ok(Gaussian { mean, sd })
        }
    }

    /// `z = mean + sd ⊙ noise`; returns the mean itself when `noise` is `None`.
    pub fn reparameterize(tape: &mut Tape, g: &Gaussian, noise: Option<Tensor>) -> Result<Var, ModelError> {
        let Some(noise) = noise else { return Ok(g.mean) };
        if noise.shape() != tape.value(g.mean).shape() {
            return Err(ModelError::Contract(format!(
                "noise shape {:?} does not match {:?}",
                noise.shape(),
                tape.value(g.mean).shape()
            )));
        }
        let e = tape.input(noise)?;
        let scaled = tape.mul(g.sd, e)?;
        Ok(tape.add(g.mean, scaled)?)
    }

    /// `p(x_t | z_t, c_t)` for every visit.
    pub fn decode(
        &self,
        tape: &mut Tape,
        z: Var,
        pt: &PatientTensors,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Decoded, ModelError> {
        let c = tape.input(pt.ctx.clone())?;
        let input = tape.concat_cols(&[z, c])?;
        let hm = self.hidden_layer(tape, self.layout.dec_mean_1, input, rng.as_deref_mut())?;
        let out = Self::dense(tape, self.layout.dec_mean_out, hm)?;
        let g = self.schema.num_continuous();
        let t_len = pt.num_visits();
        let cont_mean = tape.slice_cols(out, 0, g)?;
        let cont_sd = match self.layout.dec_sd {
            Some((d1, d2)) => {
                let hs = self.hidden_layer(tape, d1, input, rng)?;
                let raw = Self::dense(tape, d2, hs)?;
                let sd = tape.softplus(raw)?;
                tape.add_scalar(sd, SD_FLOOR)?
            }
            None => tape.input(Tensor::new(vec![t_len, g], vec![1.0; t_len * g])?)?,
        };
        let mut cat_probs = Vec::with_capacity(self.schema.num_categorical());
        let mut start = g;
        for c in &self.schema.categorical_features {
            let logits = tape.slice_cols(out, start, start + c.num_classes)?;
            cat_probs.push(tape.softmax(logits)?);
            start += c.num_classes;
        }
        Ok(Decoded { cont_mean, cont_sd, cat_probs })
    }

    /// Class probabilities per concept (`T × classes`); `None` for concepts
    /// outside every guidance group. Group heads read only their own latent
    /// columns.
    pub fn guide(
        &self,
        tape: &mut Tape,
        z: Var,
        pt: &PatientTensors,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Option<Var>>, ModelError> {
        let mut out = vec![None; self.schema.p()];
        let ctx = if self.config.guidance_context { Some(tape.input(pt.ctx.clone())?) } else { None };
        for (grp, lay) in self.config.partition().groups.iter().zip(&self.layout.guide) {
            let mut input = tape.select_cols(z, &grp.latent)?;
            if let Some(c) = ctx {
                input = tape.concat_cols(&[input, c])?;
            }
            let h = self.hidden_layer(tape, lay.hidden, input, rng.as_deref_mut())?;
            for (&concept, &d) in grp.concepts.iter().zip(&lay.outs) {
                let logits = Self::dense(tape, d, h)?;
                out[concept] = Some(tape.softmax(logits)?);
            }
        }
        Ok(out)
    }
}
