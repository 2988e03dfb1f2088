use serde::{Deserialize, Serialize};

use super::Cohort;

const MIN_SD: f64 = 1e-8;

/// Per continuous feature mean and population standard deviation over the
/// observed cells of the training cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ScalerStats {
    pub fn fit(cohort: &Cohort) -> Self {
        let nc = cohort.schema.num_continuous();
        let mut mean = vec![0.0; nc];
        let mut sd = vec![1.0; nc];
        for d in 0..nc {
            let values: Vec<f64> = cohort
                .patients
                .iter()
                .flat_map(|p| (0..p.num_visits()).filter_map(move |t| p.x.get(t, d)))
                .collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len() as f64;
            let m = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[d] = m;
            sd[d] = if var.sqrt() < MIN_SD { 1.0 } else { var.sqrt() };
        }
        Self { mean, sd }
    }

    pub fn apply(&self, d: usize, v: f64) -> f64 {
        (v - self.mean[d]) / self.sd[d]
    }

    pub fn invert(&self, d: usize, v: f64) -> f64 {
        v * self.sd[d] + self.mean[d]
    }

    /// Maps a standardized cohort back to original units.
    pub fn invert_cohort(&self, cohort: &Cohort) -> Cohort {
        self.map_cohort(cohort, |d, v| self.invert(d, v))
    }

    fn map_cohort(&self, cohort: &Cohort, f: impl Fn(usize, f64) -> f64) -> Cohort {
        let nc = cohort.schema.num_continuous();
        let mut out = cohort.clone();
        for p in &mut out.patients {
            for t in 0..p.num_visits() {
                for d in 0..nc {
                    if let Some(v) = p.x.get(t, d) {
                        p.x.set(t, d, f(d, v));
                    }
                }
            }
        }
        out
    }
}

/// Standardizes observed continuous cells, fitting the statistics on
/// `cohort` when none are given. Categorical cells are untouched.
pub fn standardize(cohort: &Cohort, stats: Option<&ScalerStats>) -> (Cohort, ScalerStats) {
    let stats = stats.cloned().unwrap_or_else(|| ScalerStats::fit(cohort));
    let out = stats.map_cohort(cohort, |d, v| stats.apply(d, v));
    (out, stats)
}
