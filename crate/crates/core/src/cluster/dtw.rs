use rayon::prelude::*;

use super::ClusterError;

/// Euclidean distance between two rows.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Accumulated cost of the cheapest monotone alignment of `a` and `b`
/// (rows are time steps) with steps (1,0), (0,1), (1,1). With a window `w`,
/// cells with `|i − j| > max(w, |T_a − T_b|)` are excluded.
pub fn dtw_distance(a: &[Vec<f64>], b: &[Vec<f64>], window: Option<usize>) -> Result<f64, ClusterError> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(ClusterError::Contract("dtw needs non-empty sequences".into()));
    }
    if a.iter().chain(b).any(|r| r.len() != a[0].len()) {
        return Err(ClusterError::Contract("dtw rows differ in width".into()));
    }
    let w = window.map(|w| w.max(n.abs_diff(m)));
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            cur[j] = f64::INFINITY;
            if w.is_some_and(|w| i.abs_diff(j) > w) {
                continue;
            }
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(prev[j]);
                }
                if j > 0 {
                    best = best.min(cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(prev[j - 1]);
                }
                best
            };
            cur[j] = best + euclidean(&a[i], &b[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Self { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// All pairwise DTW distances; each unordered pair is computed once.
pub fn pairwise_distances(trajectories: &[Vec<Vec<f64>>], window: Option<usize>) -> Result<DistanceMatrix, ClusterError> {
    let n = trajectories.len();
    if n < 2 {
        return Err(ClusterError::Contract(format!("need at least 2 trajectories, got {n}")));
    }
    let rows: Vec<Result<Vec<f64>, ClusterError>> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| dtw_distance(&trajectories[i], &trajectories[j], window)).collect())
        .collect();
    let mut upper = Vec::with_capacity(n);
    for r in rows {
        upper.push(r?);
    }
    Ok(DistanceMatrix::from_fn(n, |i, j| upper[i][j - i - 1]))
}

/// Per-dimension z-scoring over all rows of all trajectories.
pub fn zscore(trajectories: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let rows: Vec<&Vec<f64>> = trajectories.iter().flatten().collect();
    let Some(first) = rows.first() else { return trajectories.to_vec() };
    let dims = first.len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dims).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..dims)
        .map(|d| {
            let s = (rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();
    trajectories
        .iter()
        .map(|t| t.iter().map(|r| r.iter().enumerate().map(|(d, v)| (v - mean[d]) / sd[d]).collect()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn hand_examples() {
        let a = seq(&[0.0, 1.0, 2.0]);
        assert_eq!(dtw_distance(&a, &a, None).unwrap(), 0.0);
        assert_eq!(dtw_distance(&a, &seq(&[0.0, 2.0]), None).unwrap(), 1.0);
        assert_eq!(dtw_distance(&seq(&[0.0, 2.0]), &a, None).unwrap(), 1.0);
        assert!(dtw_distance(&a, &[], None).is_err());
    }

    #[test]
    fn window_restricts_paths() {
        let a = seq(&[0.0, 0.0, 0.0, 5.0]);
        let b = seq(&[0.0, 5.0, 5.0, 5.0]);
        let free = dtw_distance(&a, &b, None).unwrap();
        let tight = dtw_distance(&a, &b, Some(0)).unwrap();
        assert_eq!(free, 0.0);
        assert_eq!(tight, 10.0);
    }
}
