use gtlvm_core::cluster::{dtw_distance, kmedoids, knn, pairwise_distances, DistanceMatrix};
use proptest::prelude::*;

fn local(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s.sqrt()
}

// enumerate every monotone warping path and keep the cheapest
fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn walk(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + local(&a[i], &b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn seq(dims: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dims), 1..=max_len)
}

proptest! {
    #[test]
    fn dp_matches_exhaustive_paths((a, b) in (1usize..4).prop_flat_map(|d| (seq(d, 6), seq(d, 6)))) {
        let dp = dtw_distance(&a, &b, None).unwrap();
        prop_assert_eq!(dp, brute_force(&a, &b));
    }

    #[test]
    fn symmetric_and_zero_on_self((a, b) in (1usize..4).prop_flat_map(|d| (seq(d, 8), seq(d, 8)))) {
        prop_assert_eq!(dtw_distance(&a, &b, None).unwrap(), dtw_distance(&b, &a, None).unwrap());
        prop_assert_eq!(dtw_distance(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn repeating_last_row_is_free(a in seq(2, 8), extra in 1usize..4) {
        let mut b = a.clone();
        for _ in 0..extra {
            b.push(a.last().unwrap().clone());
        }
        prop_assert_eq!(dtw_distance(&a, &b, None).unwrap(), 0.0);
    }

    #[test]
    fn window_never_helps(a in seq(1, 7), b in seq(1, 7), w in 0usize..4) {
        prop_assert!(dtw_distance(&a, &b, Some(w)).unwrap() >= dtw_distance(&a, &b, None).unwrap());
    }

    #[test]
    fn kmedoids_is_consistent(points in prop::collection::vec(-10.0..10.0f64, 3..25), k in 1usize..4, seed in 0u64..100) {
        let d = DistanceMatrix::from_fn(points.len(), |i, j| (points[i] - points[j]).abs());
        let k = k.min(points.len());
        let r = kmedoids(&d, k, seed, 100, 2).unwrap();
        // float sums over regrouped members may wobble by an ulp
        prop_assert!(r.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].max(1.0)));
        for (i, &c) in r.assignment.iter().enumerate() {
            let own = d.get(i, r.medoids[c]);
            prop_assert!(r.medoids.iter().all(|&m| own <= d.get(i, m)));
        }
        let sum: f64 = r.cluster_cost.iter().sum();
        prop_assert!((sum - r.total_cost).abs() < 1e-9);
        prop_assert_eq!(r, kmedoids(&d, k, seed, 100, 2).unwrap());
    }
}

#[test]
fn textbook_example() {
    let a: Vec<Vec<f64>> = [0.0, 1.0, 2.0].iter().map(|&x| vec![x]).collect();
    let b: Vec<Vec<f64>> = [0.0, 2.0].iter().map(|&x| vec![x]).collect();
    assert_eq!(dtw_distance(&a, &b, None).unwrap(), 1.0);
}

#[test]
fn pairwise_matrix_matches_single_calls() {
    let trajs: Vec<Vec<Vec<f64>>> = (0..6)
        .map(|i| (0..3 + i % 3).map(|t| vec![(i * t) as f64 * 0.1, i as f64]).collect())
        .collect();
    let d = pairwise_distances(&trajs, None).unwrap();
    for i in 0..6 {
        assert_eq!(d.get(i, i), 0.0);
        for j in 0..6 {
            assert_eq!(d.get(i, j), d.get(j, i));
            if i != j {
                assert_eq!(d.get(i, j), dtw_distance(&trajs[i], &trajs[j], None).unwrap());
            }
        }
    }
    let nn = knn(&d, 2, 5).unwrap();
    assert_eq!(nn.len(), 5);
    assert!(!nn.contains(&2));
    assert!(nn.windows(2).all(|w| d.get(2, w[0]) <= d.get(2, w[1])));
}
