use approx::assert_abs_diff_eq;
use gtlvm_core::cohort::{MaskedMatrix, PatientRecord};
use gtlvm_core::forecast::{
    baseline_last_concepts, baseline_last_value, calibration_curve, predict, CohortBaseline, IntervalMode,
};
use gtlvm_core::inference::{
    choose_ks, draw_noise, elbo_loss, train, KStrategy, LossWeights, TrainConfig,
};
use gtlvm_core::kernel::{Tape, Tensor};
use gtlvm_core::model::{Checkpoint, Gaussian, InitOptions, Model, ModelConfig, Widths};
use gtlvm_core::rng::stream;
use gtlvm_core::selftest::{toy_cohort, toy_schema};
use proptest::prelude::*;
use rand::Rng;

fn small(latent: usize) -> ModelConfig {
    let mut c = ModelConfig::new(latent);
    c.widths = Widths { recurrent: 8, dense: 8, likelihood: 8, guidance: 6, prior: 6 };
    c
}

const SOFTPLUS0: f64 = std::f64::consts::LN_2 + 1e-3;

#[test]
fn fresh_prior_is_centered_with_softplus_zero_scale() {
    let cohort = toy_cohort(1, 1, 4, 0.2);
    let model = Model::new(&ModelConfig::new(4), &cohort.schema, 0).unwrap();
    let pt = model.tensors(&cohort.patients[0]);
    let mut tape = Tape::new(model.params());
    let g = model.prior(&mut tape, &pt).unwrap();
    assert!(tape.value(g.mean).data().iter().all(|&m| m == 0.0));
    for &s in tape.value(g.sd).data() {
        assert_abs_diff_eq!(s, 0.6941471805599453, epsilon = 1e-15);
    }
}

// With zero output layers every distribution is fixed, so the bound has a
// closed form: standard terms per observed cell, uniform class
// probabilities and zero KL.
#[test]
fn fresh_model_bound_matches_closed_form() {
    let cohort = toy_cohort(4, 3, 2, 0.3);
    let model = Model::new(&small(2), &cohort.schema, 3).unwrap();
    let weights = LossWeights { alpha: 0.2, beta: 0.01, mc_samples: 1 };
    let g = cohort.schema.num_continuous();
    for r in &cohort.patients {
        let mut cont = 0.0;
        let mut cat = 0.0;
        let mut guide = 0.0;
        for t in 0..r.num_visits() {
            for j in 0..cohort.schema.d() {
                if let Some(v) = r.x.get(t, j) {
                    if j < g {
                        cont += 0.5 * (2.0 * std::f64::consts::PI).ln() + SOFTPLUS0.ln()
                            + v * v / (2.0 * SOFTPLUS0 * SOFTPLUS0);
                    } else {
                        cat += (cohort.schema.categorical_features[j - g].num_classes as f64).ln();
                    }
                }
            }
            for (p, c) in cohort.schema.concepts.iter().enumerate() {
                if r.y.is_observed(t, p) {
                    guide += (c.num_classes as f64).ln();
                }
            }
        }
        let pt = model.tensors(r);
        for k in 0..=r.num_visits() {
            let mut rng = stream(0, "oracle", k as u64);
            let noise = draw_noise(&mut rng, 1, r.num_visits(), 2);
            let b = elbo_loss(&model, &pt, k, &weights, &noise).unwrap();
            assert_abs_diff_eq!(b.recon_cont, cont, epsilon = 1e-10);
            assert_abs_diff_eq!(b.recon_cat, cat, epsilon = 1e-10);
            assert_abs_diff_eq!(b.guidance, guide, epsilon = 1e-10);
            assert_abs_diff_eq!(b.kl, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(b.total, cont + cat + 0.2 * guide, epsilon = 1e-9);
        }
    }
}

#[test]
fn fixed_sigma_decoder_has_unit_scale() {
    let cohort = toy_cohort(2, 1, 3, 0.0);
    let mut cfg = small(4);
    cfg.learn_sigma = false;
    let model = Model::with_options(&cfg, &cohort.schema, 1, InitOptions { random_outputs: true }).unwrap();
    let pt = model.tensors(&cohort.patients[0]);
    let mut tape = Tape::new(model.params());
    let z = tape.input(Tensor::zeros(&[3, 4])).unwrap();
    let dec = model.decode(&mut tape, z, &pt, None).unwrap();
    assert!(tape.value(dec.cont_sd).data().iter().all(|&s| s == 1.0));
}

#[test]
fn decoding_is_visitwise() {
    let cohort = toy_cohort(6, 1, 5, 0.0);
    let model = Model::with_options(&small(4), &cohort.schema, 2, InitOptions { random_outputs: true }).unwrap();
    let pt = model.tensors(&cohort.patients[0]);
    let mut rng = stream(1, "perm", 0);
    let z: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let order = [3, 0, 4, 1, 2];
    let mut permuted = pt.clone();
    permuted.ctx = Tensor::from_rows(&order.iter().map(|&i| pt.ctx.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let zp: Vec<Vec<f64>> = order.iter().map(|&i| z[i].clone()).collect();

    let run = |pt: &gtlvm_core::model::PatientTensors, z: &[Vec<f64>]| {
        let mut tape = Tape::new(model.params());
        let zv = tape.input(Tensor::from_rows(z).unwrap()).unwrap();
        let d = model.decode(&mut tape, zv, pt, None).unwrap();
        (tape.value(d.cont_mean).clone(), tape.value(d.cont_sd).clone(), tape.value(d.cat_probs[1]).clone())
    };
    let (m, s, p) = run(&pt, &z);
    let (mp, sp, pp) = run(&permuted, &zp);
    for (row, &i) in order.iter().enumerate() {
        assert_eq!(mp.row(row), m.row(i));
        assert_eq!(sp.row(row), s.row(i));
        assert_eq!(pp.row(row), p.row(i));
    }
}

#[test]
fn reparameterized_draws_have_the_right_moments() {
    let params = gtlvm_core::kernel::ParamStore::new();
    let mut tape = Tape::new(&params);
    let mean = tape.input(Tensor::vector(vec![1.5, -2.0])).unwrap();
    let sd = tape.input(Tensor::vector(vec![0.5, 2.0])).unwrap();
    let g = Gaussian { mean, sd };
    let mut rng = stream(3, "moments", 0);
    let n = 40_000;
    let mut sums = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let e: Vec<f64> = draw_noise(&mut rng, 1, 1, 2)[0].data().to_vec();
        let z = Model::reparameterize(&mut tape, &g, Some(Tensor::vector(e))).unwrap();
        for j in 0..2 {
            let v = tape.value(z).data()[j];
            sums[j] += v;
            sq[j] += v * v;
        }
    }
    for (j, (m, s)) in [(1.5, 0.5), (-2.0, 2.0)].into_iter().enumerate() {
        let mu = sums[j] / n as f64;
        let var = sq[j] / n as f64 - mu * mu;
        assert!((mu - m).abs() < 4.0 * s / (n as f64).sqrt(), "mean {mu}");
        assert!((var.sqrt() - s).abs() < 0.02 * s, "sd {}", var.sqrt());
    }
    let z = Model::reparameterize(&mut tape, &g, None).unwrap();
    assert_eq!(z, mean);
}

#[test]
fn horizon_sets() {
    let mut rng = stream(0, "ks", 0);
    let (ks, w) = choose_ks(KStrategy::All, 6, &mut rng);
    assert_eq!(ks, (0..=6).collect::<Vec<_>>());
    assert_eq!(w, 1.0);
    for t in 1..10 {
        let (ks, w) = choose_ks(KStrategy::Subsample(2), t, &mut rng);
        assert_eq!(ks.len(), 2);
        assert!(ks[0] < ks[1] && ks[1] <= t);
        assert_eq!(w, (t + 1) as f64 / 2.0);
    }
    // a single-visit patient has only two horizons; asking for more takes all
    let (ks, _) = choose_ks(KStrategy::Subsample(5), 1, &mut rng);
    assert_eq!(ks, vec![0, 1]);
}

#[test]
fn subsampled_horizons_are_unbiased() {
    let f = |k: usize| (k * k) as f64 + 1.0;
    let t = 7;
    let exact: f64 = (0..=t).map(f).sum();
    let mut rng = stream(9, "unbiased", 0);
    let n = 40_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let (ks, w) = choose_ks(KStrategy::Subsample(2), t, &mut rng);
        acc += w * ks.iter().map(|&k| f(k)).sum::<f64>();
    }
    let est = acc / n as f64;
    assert!((est - exact).abs() / exact < 0.01, "{est} vs {exact}");
}

fn quick_train(threads: usize) -> (Vec<f64>, Vec<f64>) {
    let cohort = toy_cohort(21, 30, 5, 0.2);
    let model = Model::new(&small(4), &cohort.schema, 5).unwrap();
    let tensors: Vec<_> = cohort.patients.iter().map(|r| model.tensors(r)).collect();
    let (tr, va) = tensors.split_at(24);
    let cfg = TrainConfig { max_epochs: 6, batch_size: 8, seed: 17, ..Default::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let out = pool.install(|| train(model, tr, va, &cfg, |_| {})).unwrap();
    let vals = out.history.iter().map(|h| h.validation.total).collect();
    let params = out.model.params().entries().iter().flat_map(|e| e.value.data().to_vec()).collect();
    (vals, params)
}

#[test]
fn training_improves_and_is_reproducible() {
    let (vals, params) = quick_train(1);
    assert_eq!(vals.len(), 7);
    assert!(vals.iter().skip(1).fold(f64::INFINITY, |a, &b| a.min(b)) < vals[0]);
    let (vals2, params2) = quick_train(3);
    assert_eq!(vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vals2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert!(params.iter().zip(&params2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn predictive_summaries_match_their_draws() {
    let cohort = toy_cohort(8, 1, 6, 0.1);
    let model = Model::with_options(&small(4), &cohort.schema, 2, InitOptions { random_outputs: true }).unwrap();
    let pt = model.tensors(&cohort.patients[0]);
    let mut rng = stream(2, "predict", 0);
    let pred = predict(&model, &pt, 3, 20, 5, IntervalMode::Gaussian, &mut rng).unwrap();
    assert_eq!(pred.z_draws.len(), 20);
    assert_eq!(pred.x_draws.len(), 100);
    let g = cohort.schema.num_continuous();
    for t in 0..6 {
        for j in 0..g {
            let xs: Vec<f64> = pred.x_draws.iter().map(|x| x.get(t, j)).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            let c = &pred.cont_summary[t * g + j];
            assert_abs_diff_eq!(c.mean, mean, epsilon = 1e-12);
            assert_abs_diff_eq!(c.sd, sd, epsilon = 1e-12);
            assert_abs_diff_eq!(c.lower, mean - 1.96 * sd, epsilon = 1e-12);
            assert_abs_diff_eq!(c.upper, mean + 1.96 * sd, epsilon = 1e-12);
        }
        for p in pred.y_probs.iter().flatten() {
            assert_abs_diff_eq!(p.row(t).iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    // visits from k on are never read
    let mut tail_changed = cohort.patients[0].clone();
    for t in 3..6 {
        for j in 0..g {
            if tail_changed.x.is_observed(t, j) {
                tail_changed.x.set(t, j, 50.0);
            }
        }
    }
    let mut rng = stream(2, "predict", 0);
    let again = predict(&model, &model.tensors(&tail_changed), 3, 20, 5, IntervalMode::Gaussian, &mut rng).unwrap();
    assert_eq!(again.cont_summary, pred.cont_summary);
}

#[test]
fn last_value_baseline_carries_forward() {
    let schema = toy_schema();
    let cohort = toy_cohort(3, 20, 4, 0.2);
    let baseline = CohortBaseline::fit(&cohort);
    let x = MaskedMatrix::from_options(
        &[
            vec![Some(1.0), None, Some(1.0), None],
            vec![Some(2.0), None, None, None],
            vec![None, Some(-3.0), Some(0.0), Some(2.0)],
        ],
        4,
    );
    let y = MaskedMatrix::from_options(&[vec![Some(1.0), None], vec![None, None], vec![Some(0.0), Some(2.0)]], 2);
    let r = PatientRecord { id: "X".into(), static_s: vec![0.0], times: vec![0.0, 1.0, 2.0], x, y, meds: None };
    assert_eq!(schema.d(), 4);
    let v = baseline_last_value(&r, 2, &baseline);
    assert_eq!(v[0], 2.0);
    assert_eq!(v[1], baseline.cont_median[1]);
    assert_eq!(v[2], 1.0);
    assert_eq!(v[3], baseline.cat_mode(1) as f64);
    assert_eq!(baseline_last_value(&r, 3, &baseline), vec![2.0, -3.0, 0.0, 2.0]);
    assert_eq!(baseline_last_concepts(&r, 2, &baseline), vec![1, baseline.concept_mode(1)]);
}

#[test]
fn calibrated_probabilities_give_a_flat_curve() {
    let mut rng = stream(4, "calib", 0);
    let probs: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>()).collect();
    let pos: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    let curve = calibration_curve(&probs, &pos, 20).unwrap();
    assert!(curve.max_deviation(50).unwrap() < 0.02);
    let flipped: Vec<bool> = pos.iter().map(|b| !b).collect();
    assert!(calibration_curve(&probs, &flipped, 20).unwrap().max_deviation(50).unwrap() > 0.9);
}

#[test]
fn checkpoint_round_trip() {
    let cohort = toy_cohort(5, 4, 3, 0.1);
    let (std, scaler) = gtlvm_core::cohort::standardize(&cohort, None);
    let model = Model::with_options(&small(4), &std.schema, 9, InitOptions { random_outputs: true }).unwrap();
    let ck = Checkpoint::new(&model, &scaler, &CohortBaseline::fit(&std));
    let mut buf = Vec::new();
    ck.write(&mut buf).unwrap();
    let back = Checkpoint::read(&buf[..]).unwrap();
    assert_eq!(back.model().unwrap().params(), model.params());
    assert!(Checkpoint::read(&b"{\"format\": \"other\"}"[..]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn bound_is_finite_on_random_patients(seed in 0u64..1000, t in 1usize..6, missing in 0.0..0.9f64) {
        let cohort = toy_cohort(seed, 1, t, missing);
        let model = Model::with_options(&small(4), &cohort.schema, seed, InitOptions { random_outputs: true }).unwrap();
        let pt = model.tensors(&cohort.patients[0]);
        let mut rng = stream(seed, "finite", 0);
        for k in 0..=t {
            let noise = draw_noise(&mut rng, 2, t, 4);
            let b = elbo_loss(&model, &pt, k, &LossWeights::default(), &noise).unwrap();
            prop_assert!(b.total.is_finite());
            prop_assert!(b.kl >= 0.0);
        }
    }
}

// The analytic KL minus a sampled estimate, in standard errors, should look
// like a standard normal across many parameter pairs.
#[test]
fn kl_sampling_errors_are_standard_normal() {
    use gtlvm_core::inference::kl_diag_gaussian;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = stream(8, "kl-calibration", 0);
    let pairs = 400;
    let mut zs = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let dim = rng.random_range(1..=4);
        let mut v = |lo: f64, hi: f64| (0..dim).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
        let (qm, qs, pm, ps) = (v(-2.0, 2.0), v(0.3, 2.0), v(-2.0, 2.0), v(0.3, 2.0));
        let n = 20_000;
        let (mut s, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut lr = 0.0;
            for j in 0..dim {
                let z = qm[j] + qs[j] * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                lr += 0.5 * ((z - pm[j]) / ps[j]).powi(2) - 0.5 * ((z - qm[j]) / qs[j]).powi(2) + (ps[j] / qs[j]).ln();
            }
            s += lr;
            sq += lr * lr;
        }
        let m = s / n as f64;
        let var = (sq - n as f64 * m * m) / (n as f64 - 1.0);
        zs.push((m - kl_diag_gaussian(&qm, &qs, &pm, &ps)) / (var / n as f64).sqrt());
    }
    let mean = zs.iter().sum::<f64>() / pairs as f64;
    let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / pairs as f64).sqrt();
    assert!(mean.abs() < 0.2, "mean z {mean}");
    assert!((0.85..1.15).contains(&sd), "sd of z {sd}");
    assert!(zs.iter().filter(|z| z.abs() > 3.0).count() <= 5);
}
