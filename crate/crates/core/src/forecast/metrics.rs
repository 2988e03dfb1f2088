use serde::{Deserialize, Serialize};

use super::ForecastError;

/// Fraction of observed cells whose truth lies inside `[lower, upper]`.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64], mask: &[bool]) -> Result<f64, ForecastError> {
    let mut n = 0usize;
    let mut hit = 0usize;
    for i in 0..truth.len() {
        if mask[i] {
            n += 1;
            if lower[i] <= truth[i] && truth[i] <= upper[i] {
                hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(ForecastError::NoCells("coverage"));
    }
    Ok(hit as f64 / n as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Option<f64> {
    if pred.is_empty() {
        return None;
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Some((sse / pred.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub bin_edges: Vec<f64>,
    /// `None` for empty bins.
    pub mean_predicted: Vec<Option<f64>>,
    pub fraction_positive: Vec<Option<f64>>,
    pub bin_counts: Vec<usize>,
}

impl CalibrationCurve {
    /// Largest `|fraction_positive − mean_predicted|` over bins holding at
    /// least `min_count` points.
    pub fn max_deviation(&self, min_count: usize) -> Option<f64> {
        self.mean_predicted
            .iter()
            .zip(&self.fraction_positive)
            .zip(&self.bin_counts)
            .filter(|(_, &n)| n >= min_count && n > 0)
            .filter_map(|((m, f), _)| Some((f.as_ref()? - m.as_ref()?).abs()))
            .reduce(f64::max)
    }
}

/// Equal-width reliability curve. Probabilities equal to 1 fall in the last
/// bin.
pub fn calibration_curve(probs: &[f64], positive: &[bool], bins: usize) -> Result<CalibrationCurve, ForecastError> {
    if bins == 0 {
        return Err(ForecastError::Contract("calibration needs at least one bin".into()));
    }
    let mut sum_p = vec![0.0; bins];
    let mut pos = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for (&p, &y) in probs.iter().zip(positive) {
        if !(0.0..=1.0).contains(&p) {
            return Err(ForecastError::Contract(format!("probability {p} outside [0, 1]")));
        }
        let b = ((p * bins as f64) as usize).min(bins - 1);
        sum_p[b] += p;
        pos[b] += usize::from(y);
        counts[b] += 1;
    }
    let per = |num: &dyn Fn(usize) -> f64| -> Vec<Option<f64>> {
        (0..bins).map(|b| (counts[b] > 0).then(|| num(b) / counts[b] as f64)).collect()
    };
    Ok(CalibrationCurve {
        bin_edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        mean_predicted: per(&|b| sum_p[b]),
        fraction_positive: per(&|b| pos[b] as f64),
        bin_counts: counts,
    })
}

/// Unweighted mean of per-class F1 over classes present in either the
/// predictions or the truth.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64, ForecastError> {
    if truth.is_empty() {
        return Err(ForecastError::NoCells("macro F1"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let scores: Vec<f64> = (0..num_classes)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn coverage_examples() {
        let truth = [0.3, -2.0, 5.0];
        let mask = [true, true, false];
        assert_eq!(coverage(&[-1e6; 3], &[1e6; 3], &truth, &mask).unwrap(), 1.0);
        assert_eq!(coverage(&truth, &truth, &truth, &mask).unwrap(), 1.0);
        assert_eq!(coverage(&[0.0; 3], &[1.0; 3], &truth, &mask).unwrap(), 0.5);
        assert!(coverage(&[0.0; 3], &[1.0; 3], &truth, &[false; 3]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(macro_f1(&[1, 1, 1], &[1, 1, 1], 2).unwrap(), 1.0);
        // confusion [[2,1],[1,2]]
        let truth = [0, 0, 0, 1, 1, 1];
        let pred = [0, 0, 1, 0, 1, 1];
        assert_abs_diff_eq!(macro_f1(&pred, &truth, 2).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(macro_f1(&[], &[], 2).is_err());
    }

    #[test]
    fn calibration_examples() {
        let c = calibration_curve(&[1.0, 1.0, 1.0], &[true, true, true], 20).unwrap();
        assert_eq!(c.bin_edges.len(), 21);
        assert_eq!(c.bin_counts.iter().filter(|&&n| n > 0).count(), 1);
        assert_eq!((c.mean_predicted[19], c.fraction_positive[19]), (Some(1.0), Some(1.0)));
        assert_eq!(c.mean_predicted[3], None);
        assert_eq!(c.max_deviation(1), Some(0.0));
        assert!(calibration_curve(&[1.5], &[true], 20).is_err());
    }
}
