//! Value-level loss terms, independent of any tape.

use crate::kernel::{kl_diag_value, Tensor, PROB_FLOOR, SD_CLAMP};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// `Σ ln(σp/σq) + (σq² + (μq−μp)²)/(2σp²) − ½` over all entries.
pub fn kl_diag_gaussian(q_mean: &[f64], q_sd: &[f64], p_mean: &[f64], p_sd: &[f64]) -> f64 {
    kl_diag_value(q_mean, q_sd, p_mean, p_sd)
}

/// Gaussian negative log-likelihood summed over observed cells.
pub fn masked_gaussian_nll(x: &[f64], mask: &[bool], mean: &[f64], sd: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        if mask[i] {
            let s = sd[i].max(SD_CLAMP);
            let r = (x[i] - mean[i]) / s;
            total += HALF_LN_2PI + s.ln() + 0.5 * r * r;
        }
    }
    total
}

/// Cross-entropy of observed labels under row-wise class probabilities.
pub fn masked_categorical_ce(labels: &[usize], mask: &[bool], probs: &Tensor) -> f64 {
    let mut total = 0.0;
    for (t, (&label, &m)) in labels.iter().zip(mask).enumerate() {
        if m {
            total -= probs.row(t)[label].max(PROB_FLOOR).ln();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_examples() {
        assert_abs_diff_eq!(kl_diag_gaussian(&[0.3], &[1.7], &[0.3], &[1.7]), 0.0);
        assert_abs_diff_eq!(kl_diag_gaussian(&[1.0], &[1.0], &[0.0], &[1.0]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_diag_gaussian(&[0.0], &[2.0], &[0.0], &[1.0]), 0.806_852_819_440_054_7, epsilon = 1e-12);
        assert_abs_diff_eq!(masked_gaussian_nll(&[2.0], &[true], &[2.0], &[1.0]), 0.918_939, epsilon = 1e-6);
        assert_abs_diff_eq!(masked_gaussian_nll(&[2.5], &[true], &[2.0], &[0.5]), 0.918_939 + 0.5 + 0.5f64.ln(), epsilon = 1e-6);
        assert_eq!(masked_gaussian_nll(&[f64::NAN], &[false], &[0.0], &[1.0]), 0.0);
        let uniform = Tensor::matrix(2, 4, vec![0.25; 8]).unwrap();
        assert_abs_diff_eq!(masked_categorical_ce(&[0, 3], &[true, true], &uniform), 2.0 * 4f64.ln(), epsilon = 1e-12);
        assert_eq!(masked_categorical_ce(&[0, 3], &[false, false], &uniform), 0.0);
        let sure = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(masked_categorical_ce(&[1], &[true], &sure), 0.0);
    }
}
