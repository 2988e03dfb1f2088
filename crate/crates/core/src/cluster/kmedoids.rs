use rand::Rng;

use super::{ClusterError, DistanceMatrix};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq)]
pub struct KMedoids {
    /// Cluster index per point.
    pub assignment: Vec<usize>,
    /// Point index of each cluster's medoid.
    pub medoids: Vec<usize>,
    pub cluster_cost: Vec<f64>,
    pub total_cost: f64,
    /// Total cost after each assignment step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

/// Nearest medoid per point; ties go to the lower cluster index.
fn assign(dist: &DistanceMatrix, medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assignment = (0..dist.len())
        .map(|i| {
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate() {
                if dist.get(i, m) < dist.get(i, medoids[best]) {
                    best = c;
                }
            }
            total += dist.get(i, medoids[best]);
            best
        })
        .collect();
    (assignment, total)
}

/// Distance-weighted seeding: the first medoid uniformly, each next one with
/// probability proportional to the distance to the nearest chosen medoid.
fn seed_medoids(dist: &DistanceMatrix, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = dist.len();
    let mut medoids = vec![rng.random_range(0..n)];
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| medoids.iter().map(|&m| dist.get(i, m)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    if u < w {
                        pick = Some(i);
                        break;
                    }
                    u -= w;
                }
            }
            // rounding can exhaust u before the end; take the last candidate
            pick.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            (0..n).find(|i| !medoids.contains(i)).expect("k <= n")
        };
        medoids.push(next);
    }
    medoids
}

fn run_once(dist: &DistanceMatrix, k: usize, max_iter: usize, rng: &mut impl Rng) -> KMedoids {
    let mut medoids = seed_medoids(dist, k, rng);
    let (mut assignment, mut total) = assign(dist, &medoids);
    let mut history = vec![total];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut changed = false;
        for (c, medoid) in medoids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..dist.len()).filter(|&i| assignment[i] == c).collect();
            let cost = |m: usize| members.iter().map(|&i| dist.get(i, m)).sum::<f64>();
            let mut best = *medoid;
            let mut best_cost = cost(best);
            for &cand in &members {
                let cc = cost(cand);
                if cc < best_cost {
                    best = cand;
                    best_cost = cc;
                }
            }
            if best != *medoid {
                *medoid = best;
                changed = true;
            }
        }
        let (a, t) = assign(dist, &medoids);
        // regrouping reorders the float sums, so allow a few ulps
        assert!(t <= total + 1e-12 * total.abs().max(1.0), "k-medoids cost increased from {total} to {t}");
        assignment = a;
        total = t;
        history.push(total);
        if !changed {
            break;
        }
    }
    let mut cluster_cost = vec![0.0; k];
    for (i, &c) in assignment.iter().enumerate() {
        cluster_cost[c] += dist.get(i, medoids[c]);
    }
    KMedoids { assignment, medoids, cluster_cost, total_cost: total, cost_history: history, iterations }
}

/// Alternating k-medoids from `restarts` seeded starts; the cheapest run wins
/// (earliest on ties).
pub fn kmedoids(
    dist: &DistanceMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<KMedoids, ClusterError> {
    let n = dist.len();
    if k < 1 || k > n {
        return Err(ClusterError::Contract(format!("k = {k} must lie in 1..={n}")));
    }
    let mut best: Option<KMedoids> = None;
    for r in 0..restarts.max(1) {
        let run = run_once(dist, k, max_iter, &mut stream(seed, "kmedoids", r as u64));
        if best.as_ref().is_none_or(|b| run.total_cost < b.total_cost) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// The `k` nearest other points to `query`, closest first, ties to the
/// smaller index.
pub fn knn(dist: &DistanceMatrix, query: usize, k: usize) -> Result<Vec<usize>, ClusterError> {
    let n = dist.len();
    if query >= n || k >= n {
        return Err(ClusterError::Contract(format!("query {query} / k {k} invalid for {n} points")));
    }
    let mut idx: Vec<usize> = (0..n).filter(|&i| i != query).collect();
    idx.sort_by(|&a, &b| dist.get(query, a).total_cmp(&dist.get(query, b)).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> DistanceMatrix {
        DistanceMatrix::from_fn(points.len(), |i, j| (points[i] - points[j]).abs())
    }

    #[test]
    fn k_equals_n_is_free() {
        let d = line(&[0.0, 1.0, 5.0, 9.0]);
        let r = kmedoids(&d, 4, 1, 50, 3).unwrap();
        assert_eq!(r.total_cost, 0.0);
        let mut m = r.medoids.clone();
        m.sort_unstable();
        assert_eq!(m, vec![0, 1, 2, 3]);
        assert!(kmedoids(&d, 5, 1, 50, 1).is_err());
    }

    #[test]
    fn separates_two_groups() {
        let d = line(&[0.0, 0.1, 0.2, 10.0, 10.1, 10.3]);
        let r = kmedoids(&d, 2, 4, 50, 1).unwrap();
        assert_eq!(r.assignment[0], r.assignment[2]);
        assert_ne!(r.assignment[0], r.assignment[3]);
        assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn knn_orders_and_breaks_ties() {
        let d = line(&[0.0, 1.0, -1.0, 0.0, 3.0]);
        assert_eq!(knn(&d, 0, 3).unwrap(), vec![3, 1, 2]);
        assert!(knn(&d, 0, 5).is_err());
    }
}
