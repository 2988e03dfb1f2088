//! Multinomial logistic-regression probes on latent features.

/// Softmax regression on standardized features, fit by full-batch gradient
/// descent with a small ridge penalty.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    mean: Vec<f64>,
    sd: Vec<f64>,
    /// `classes × (dims + 1)`, bias last.
    w: Vec<Vec<f64>>,
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, iterations: usize) -> Self {
        assert_eq!(x.len(), y.len(), "probe inputs differ in length");
        assert!(!x.is_empty(), "probe needs data");
        let dims = x[0].len();
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..dims).map(|d| x.iter().map(|r| r[d]).sum::<f64>() / n).collect();
        let sd: Vec<f64> = (0..dims)
            .map(|d| {
                let v = x.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
                if v > 1e-12 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut probe = Self { mean, sd, w: vec![vec![0.0; dims + 1]; classes] };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| probe.features(r)).collect();
        let (lr, ridge) = (0.5, 1e-4);
        for _ in 0..iterations {
            let mut grad = vec![vec![0.0; dims + 1]; classes];
            for (f, &label) in xs.iter().zip(y) {
                let p = probe.softmax(f);
                for c in 0..classes {
                    let e = p[c] - if c == label { 1.0 } else { 0.0 };
                    for (g, v) in grad[c].iter_mut().zip(f) {
                        *g += e * v;
                    }
                }
            }
            for (wc, gc) in probe.w.iter_mut().zip(&grad) {
                for (w, g) in wc.iter_mut().zip(gc) {
                    *w -= lr * (g / n + ridge * *w);
                }
            }
        }
        probe
    }

    fn features(&self, r: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = r.iter().zip(self.mean.iter().zip(&self.sd)).map(|(v, (m, s))| (v - m) / s).collect();
        f.push(1.0);
        f
    }

    fn softmax(&self, f: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self.w.iter().map(|w| w.iter().zip(f).map(|(a, b)| a * b).sum()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Most probable class; ties go to the lower class.
    pub fn predict(&self, r: &[f64]) -> usize {
        let p = self.softmax(&self.features(r));
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len().max(1) as f64
    }
}
