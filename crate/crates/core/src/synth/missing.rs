use rand::Rng;

use super::SynthError;
use crate::cohort::Cohort;
use crate::rng::stream;

/// Hides observed cells independently with the given rates. A patient whose
/// first visit had any observed measurement keeps at least one of them.
pub fn apply_missingness(cohort: &Cohort, rate_x: f64, rate_y: f64, seed: u64) -> Result<Cohort, SynthError> {
    for (name, r) in [("rate_x", rate_x), ("rate_y", rate_y)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(SynthError::Config(format!("{name} = {r} outside [0, 1]")));
        }
    }
    let mut patients = cohort.patients.clone();
    for (i, p) in patients.iter_mut().enumerate() {
        let mut rng = stream(seed, "missing", i as u64);
        let original = p.x.clone();
        // one draw per cell regardless of state keeps streams aligned
        for t in 0..p.x.rows() {
            for d in 0..p.x.cols() {
                if rng.random::<f64>() < rate_x {
                    p.x.clear(t, d);
                }
            }
        }
        for t in 0..p.y.rows() {
            for d in 0..p.y.cols() {
                if rng.random::<f64>() < rate_y {
                    p.y.clear(t, d);
                }
            }
        }
        if p.x.rows() > 0 && (0..p.x.cols()).all(|d| !p.x.is_observed(0, d)) {
            let candidates: Vec<usize> = (0..original.cols()).filter(|&d| original.is_observed(0, d)).collect();
            if !candidates.is_empty() {
                let d = candidates[rng.random_range(0..candidates.len())];
                p.x.set(0, d, original.get(0, d).expect("observed"));
            }
        }
    }
    Ok(cohort.with_patients(patients))
}
