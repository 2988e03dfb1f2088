use crate::cohort::{FeatureSchema, PatientRecord};
use crate::kernel::Tensor;

/// Masked class labels of one categorical column over visits.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelColumn {
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

/// Network-ready view of one standardized patient. Masked cells are stored
/// as zeros and never influence any value derived here.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientTensors {
    pub times: Vec<f64>,
    /// One encoder input vector per visit.
    pub enc_rows: Vec<Tensor>,
    /// `T × (1+S)`: scaled visit time and statics.
    pub ctx: Tensor,
    /// Continuous targets, `T × G` row-major.
    pub cont: Vec<f64>,
    pub cont_mask: Vec<bool>,
    pub cat: Vec<LabelColumn>,
    pub concepts: Vec<LabelColumn>,
    static_s: Vec<f64>,
    time_scale: f64,
}

pub fn encoder_input_dim(schema: &FeatureSchema) -> usize {
    let g = schema.num_continuous();
    let k: usize = schema.categorical_features.iter().map(|c| c.num_classes).sum();
    2 * g + k + schema.num_categorical() + 2 + schema.s()
}

fn label_column(m: &crate::cohort::MaskedMatrix, col: usize, classes: usize) -> LabelColumn {
    let t_len = m.rows();
    let mut labels = vec![0; t_len];
    let mut mask = vec![false; t_len];
    for t in 0..t_len {
        if let Some(v) = m.get(t, col) {
            let c = v as usize;
            // validated on load; guard anyway so a bad value is ignored, not indexed
            if c < classes {
                labels[t] = c;
                mask[t] = true;
            }
        }
    }
    LabelColumn { labels, mask }
}

impl PatientTensors {
    /// `record` must already be standardized.
    pub fn new(record: &PatientRecord, schema: &FeatureSchema, time_scale: f64) -> Self {
        let t_len = record.num_visits();
        let g = schema.num_continuous();
        let s = schema.s();
        let mut cont = vec![0.0; t_len * g];
        let mut cont_mask = vec![false; t_len * g];
        let mut enc_rows = Vec::with_capacity(t_len);
        let mut ctx = Vec::with_capacity(t_len * (1 + s));
        for t in 0..t_len {
            let mut row = Vec::with_capacity(encoder_input_dim(schema));
            for d in 0..g {
                if let Some(v) = record.x.get(t, d) {
                    cont[t * g + d] = v;
                    cont_mask[t * g + d] = true;
                }
            }
            row.extend_from_slice(&cont[t * g..(t + 1) * g]);
            row.extend(cont_mask[t * g..(t + 1) * g].iter().map(|&m| f64::from(u8::from(m))));
            let mut cat_masks = Vec::with_capacity(schema.num_categorical());
            for (j, c) in schema.categorical_features.iter().enumerate() {
                let mut one_hot = vec![0.0; c.num_classes];
                let v = record.x.get(t, g + j).map(|v| v as usize).filter(|&v| v < c.num_classes);
                if let Some(v) = v {
                    one_hot[v] = 1.0;
                }
                row.extend(one_hot);
                cat_masks.push(f64::from(u8::from(v.is_some())));
            }
            row.extend(cat_masks);
            let dt = if t == 0 { 0.0 } else { record.times[t] - record.times[t - 1] };
            row.push(dt / time_scale);
            row.push(record.times[t] / time_scale);
            row.extend_from_slice(&record.static_s);
            enc_rows.push(Tensor::vector(row));

            ctx.push(record.times[t] / time_scale);
            ctx.extend_from_slice(&record.static_s);
        }
        let cat = schema
            .categorical_features
            .iter()
            .enumerate()
            .map(|(j, c)| label_column(&record.x, g + j, c.num_classes))
            .collect();
        let concepts =
            schema.concepts.iter().enumerate().map(|(j, c)| label_column(&record.y, j, c.num_classes)).collect();
        Self {
            times: record.times.clone(),
            enc_rows,
            ctx: Tensor::matrix(t_len, 1 + s, ctx).expect("context layout"),
            cont,
            cont_mask,
            cat,
            concepts,
            static_s: record.static_s.clone(),
            time_scale,
        }
    }

    pub fn num_visits(&self) -> usize {
        self.times.len()
    }

    /// `T × (2+S)` rows `[(τ_t − τ_k), τ_t, s]` (scaled) for an encoder that
    /// has seen `k` visits; with nothing seen the reference time is the
    /// first visit.
    pub fn posterior_context(&self, k: usize) -> Tensor {
        let t_len = self.num_visits();
        let s = self.static_s.len();
        let tau_k = self.times[k.saturating_sub(1)];
        let mut data = Vec::with_capacity(t_len * (2 + s));
        for &tau in &self.times {
            data.push((tau - tau_k) / self.time_scale);
            data.push(tau / self.time_scale);
            data.extend_from_slice(&self.static_s);
        }
        Tensor::matrix(t_len, 2 + s, data).expect("context layout")
    }

    /// Copy restricted to the first `k` visits for targets and encoder input
    /// while keeping all `T` context rows. Used to hide the future.
    pub fn observed_prefix(&self, k: usize) -> Self {
        let mut out = self.clone();
        let g = if self.num_visits() == 0 { 0 } else { self.cont.len() / self.num_visits() };
        for i in k * g..self.cont.len() {
            out.cont[i] = 0.0;
            out.cont_mask[i] = false;
        }
        for col in out.cat.iter_mut().chain(out.concepts.iter_mut()) {
            for t in k..col.labels.len() {
                col.labels[t] = 0;
                col.mask[t] = false;
            }
        }
        out.enc_rows.truncate(k);
        out
    }
}
