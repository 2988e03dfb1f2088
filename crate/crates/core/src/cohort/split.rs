use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Cohort, CohortError};

pub fn filter_min_visits(cohort: &Cohort, min_visits: usize) -> Cohort {
    let kept = cohort.patients.iter().filter(|p| p.num_visits() >= min_visits).cloned().collect();
    cohort.with_patients(kept)
}

/// Patient-level random partition into `(train, validation, test)`.
///
/// Group sizes are rounded from the fractions; every group gets at least one
/// patient.
pub fn split(cohort: &Cohort, fractions: (f64, f64, f64), seed: u64) -> Result<(Cohort, Cohort, Cohort), CohortError> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(CohortError::Split(format!("split fractions {fractions:?} must be positive and sum to 1")));
    }
    let n = cohort.len();
    if n < 3 {
        return Err(CohortError::Split(format!("cannot split {n} patients into three groups")));
    }
    let mut sizes = [(a * n as f64).round() as usize, (b * n as f64).round() as usize, 0];
    sizes[0] = sizes[0].clamp(1, n - 2);
    sizes[1] = sizes[1].clamp(1, n - 1 - sizes[0]);
    sizes[2] = n - sizes[0] - sizes[1];

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| {
        let mut idx: Vec<usize> = order[range].to_vec();
        idx.sort_unstable();
        cohort.with_patients(idx.into_iter().map(|i| cohort.patients[i].clone()).collect())
    };
    Ok((
        take(0..sizes[0]),
        take(sizes[0]..sizes[0] + sizes[1]),
        take(sizes[0] + sizes[1]..n),
    ))
}
