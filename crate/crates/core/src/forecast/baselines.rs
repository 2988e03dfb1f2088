use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, MaskedMatrix, PatientRecord};

/// Training-cohort marginals used by both reference forecasters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortBaseline {
    pub cont_mean: Vec<f64>,
    pub cont_sd: Vec<f64>,
    pub cont_median: Vec<f64>,
    pub cat_freq: Vec<Vec<f64>>,
    pub concept_freq: Vec<Vec<f64>>,
}

const SD_FLOOR: f64 = 1e-8;

fn frequencies(m: impl Iterator<Item = f64>, classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for v in m {
        if let Some(c) = counts.get_mut(v as usize) {
            *c += 1;
        }
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![1.0 / classes as f64; classes];
    }
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

fn column(cohort: &Cohort, pick: fn(&PatientRecord) -> &MaskedMatrix, col: usize) -> Vec<f64> {
    cohort.patients.iter().flat_map(|p| (0..p.num_visits()).filter_map(move |t| pick(p).get(t, col))).collect()
}

fn mode(freq: &[f64]) -> usize {
    // first maximum, so ties go to the lower class
    let mut best = 0;
    for (c, &f) in freq.iter().enumerate() {
        if f > freq[best] {
            best = c;
        }
    }
    best
}

impl CohortBaseline {
    pub fn fit(cohort: &Cohort) -> Self {
        let s = &cohort.schema;
        let g = s.num_continuous();
        let mut cont_mean = Vec::with_capacity(g);
        let mut cont_sd = Vec::with_capacity(g);
        let mut cont_median = Vec::with_capacity(g);
        for d in 0..g {
            let mut v = column(cohort, |p| &p.x, d);
            if v.is_empty() {
                cont_mean.push(0.0);
                cont_sd.push(1.0);
                cont_median.push(0.0);
                continue;
            }
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            cont_mean.push(m);
            cont_sd.push((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt().max(SD_FLOOR));
            v.sort_by(f64::total_cmp);
            let mid = v.len() / 2;
            cont_median.push(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) });
        }
        let cat_freq = s
            .categorical_features
            .iter()
            .enumerate()
            .map(|(j, c)| frequencies(column(cohort, |p| &p.x, g + j).into_iter(), c.num_classes))
            .collect();
        let concept_freq = s
            .concepts
            .iter()
            .enumerate()
            .map(|(j, c)| frequencies(column(cohort, |p| &p.y, j).into_iter(), c.num_classes))
            .collect();
        Self { cont_mean, cont_sd, cont_median, cat_freq, concept_freq }
    }

    pub fn cat_mode(&self, j: usize) -> usize {
        mode(&self.cat_freq[j])
    }

    pub fn concept_mode(&self, j: usize) -> usize {
        mode(&self.concept_freq[j])
    }

    /// One draw of every feature (continuous-first layout) and concept from
    /// the training marginals.
    pub fn sample(&self, rng: &mut impl Rng) -> (Vec<f64>, Vec<usize>) {
        let mut x: Vec<f64> = self
            .cont_mean
            .iter()
            .zip(&self.cont_sd)
            .map(|(m, s)| {
                let e: f64 = StandardNormal.sample(rng);
                m + s * e
            })
            .collect();
        x.extend(self.cat_freq.iter().map(|f| draw(rng, f) as f64));
        let y = self.concept_freq.iter().map(|f| draw(rng, f)).collect();
        (x, y)
    }
}

fn draw(rng: &mut impl Rng, freq: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, f) in freq.iter().enumerate() {
        acc += f;
        if u < acc {
            return c;
        }
    }
    freq.len() - 1
}

/// Carries the most recent observed value among the first `k` visits
/// forward; unobserved features fall back to the training median or mode.
/// Returns one value per feature in the continuous-first layout.
pub fn baseline_last_value(record: &PatientRecord, k: usize, baseline: &CohortBaseline) -> Vec<f64> {
    let g = baseline.cont_median.len();
    (0..record.x.cols())
        .map(|d| {
            (0..k.min(record.num_visits())).rev().find_map(|t| record.x.get(t, d)).unwrap_or_else(|| {
                if d < g {
                    baseline.cont_median[d]
                } else {
                    baseline.cat_mode(d - g) as f64
                }
            })
        })
        .collect()
}

/// Last observed concept label among the first `k` visits, else the
/// training mode.
pub fn baseline_last_concepts(record: &PatientRecord, k: usize, baseline: &CohortBaseline) -> Vec<usize> {
    (0..record.y.cols())
        .map(|j| {
            (0..k.min(record.num_visits()))
                .rev()
                .find_map(|t| record.y.get(t, j))
                .map_or_else(|| baseline.concept_mode(j), |v| v as usize)
        })
        .collect()
}
