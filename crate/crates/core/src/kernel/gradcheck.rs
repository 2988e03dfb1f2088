use super::{KernelError, ParamStore, Tape, Var};

/// Compares reverse-mode gradients against central differences.
///
/// `f` builds a scalar loss on a fresh tape. Returns the maximum over all
/// scalar parameters of `|g_ad − g_fd| / max(1, |g_fd|)`.
pub fn finite_difference_check<F>(params: &ParamStore, h: f64, f: F) -> Result<f64, KernelError>
where
    F: Fn(&mut Tape) -> Result<Var, KernelError>,
{
    if !(1e-6..=1e-3).contains(&h) {
        return Err(KernelError::Contract(format!("step {h} outside [1e-6, 1e-3]")));
    }
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |p: &ParamStore| -> Result<f64, KernelError> {
        let mut tape = Tape::new(p);
        let loss = f(&mut tape)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(KernelError::NonFinite("finite difference objective".into()));
        }
        Ok(v)
    };
    let mut work = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let ad = analytic.get(id)[k];
            worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{ParamId, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(3.0));
        let err = finite_difference_check(&s, 1e-4, |t| {
            let w = t.param(ParamId(0));
            let sq = t.mul(w, w)?;
            t.sum(sq)
        })
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, 2.0]));
        let err = finite_difference_check(&s, 1e-4, |t| {
            let c = t.input(Tensor::scalar(5.0))?;
            t.sum(c)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn step_outside_range_rejected() {
        let s = ParamStore::new();
        let r = finite_difference_check(&s, 0.1, |t| t.input(Tensor::scalar(0.0)));
        assert!(matches!(r, Err(KernelError::Contract(_))));
    }
}
