use std::path::Path;

use anyhow::{bail, Context};
use clap::ValueEnum;
use gtlvm_core::cluster::{
    concept_profile, kmedoids, knn, latent_trajectory, pairwise_distances, zscore, DistanceMatrix, LatentTrajectory,
};
use gtlvm_core::cohort::{
    filter_min_visits, parse_cohort, split, standardize, write_cohort_string, Cohort, Provenance,
};
use gtlvm_core::config::{config_hash, RunConfig};
use gtlvm_core::forecast::{evaluate as score, predict, CohortBaseline, EvalReport, Horizon, MethodScores};
use gtlvm_core::inference::{train as fit, EpochRecord, InferenceError, LossBreakdown, TrainOutcome};
use gtlvm_core::model::{Checkpoint, Model};
use gtlvm_core::rng::{derive_seed, stream};
use gtlvm_core::synth::simulate_cohort;
use rayon::prelude::*;

use crate::io::{num, opt, write_atomic, Table};
use crate::ModelInputs;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitChoice {
    Test,
    All,
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<(RunConfig, Provenance)> {
    let (mut cfg, text) = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    let prov = Provenance { config_sha256: config_hash(&text), seed: cfg.seed };
    Ok((cfg, prov))
}

pub fn simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    patients: Option<usize>,
    truth: Option<&Path>,
) -> anyhow::Result<()> {
    let (cfg, prov) = load_config(config, seed)?;
    let mut sim = cfg.simulate.context("config has no `simulate` section")?;
    if let Some(n) = patients {
        sim.n_patients = n;
    }
    let mut result = simulate_cohort(&sim)?;
    result.cohort.schema.provenance = Some(prov.clone());
    write_atomic(out, write_cohort_string(&result.cohort).as_bytes())?;
    if let Some(path) = truth {
        let mut cols = vec!["id".to_string(), "bundle".into(), "visit".into(), "time".into()];
        cols.extend((0..sim.n_factors).map(|f| format!("factor_{f}")));
        let mut table = Table::new(&prov, &cols.iter().map(String::as_str).collect::<Vec<_>>())?;
        for ((rec, paths), bundle) in result.cohort.patients.iter().zip(&result.factors).zip(&result.bundles) {
            for (t, f) in paths.iter().enumerate() {
                let mut row = vec![rec.id.clone(), bundle.map(|b| b.to_string()).unwrap_or_default()];
                row.push(t.to_string());
                row.push(num(rec.times[t]));
                row.extend(f.iter().map(|&v| num(v)));
                table.row(&row)?;
            }
        }
        table.save(path)?;
    }
    eprintln!("simulated {} patients -> {}", result.cohort.len(), out.display());
    Ok(())
}

fn loss_fields(b: &LossBreakdown) -> Vec<String> {
    vec![num(b.total), num(b.recon_cont), num(b.recon_cat), num(b.guidance), num(b.kl)]
}

fn history_table(prov: &Provenance, history: &[EpochRecord]) -> anyhow::Result<Table> {
    let mut cols = vec!["epoch"];
    let terms = ["total", "recon_cont", "recon_cat", "guidance", "kl"];
    let names: Vec<String> =
        ["train", "validation"].iter().flat_map(|s| terms.iter().map(move |t| format!("{s}_{t}"))).collect();
    cols.extend(names.iter().map(String::as_str));
    cols.push("improved");
    let mut table = Table::new(prov, &cols)?;
    for r in history {
        let mut row = vec![r.epoch.to_string()];
        row.extend(loss_fields(&r.train));
        row.extend(loss_fields(&r.validation));
        row.push(r.improved.to_string());
        table.row(&row)?;
    }
    Ok(table)
}

fn save_checkpoint(path: &Path, outcome: &TrainOutcome, ck_base: &Checkpoint) -> anyhow::Result<()> {
    let mut ck = Checkpoint::new(&outcome.model, &ck_base.scaler, &ck_base.baseline);
    ck.schema.provenance = ck_base.schema.provenance.clone();
    let mut buf = Vec::new();
    ck.write(&mut buf)?;
    write_atomic(path, &buf)
}

fn read_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Checkpoint::read(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn train(
    cohort: &Path,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    warm_start: Option<&Path>,
    history: Option<&Path>,
) -> anyhow::Result<()> {
    let (cfg, prov) = load_config(config, seed)?;
    let raw = parse_cohort(cohort).with_context(|| format!("reading {}", cohort.display()))?;
    let raw = filter_min_visits(&raw, cfg.data.min_visits);
    let (tr, va, _) = split(&raw, cfg.data.split, cfg.split_seed())?;
    let warm = warm_start.map(read_checkpoint).transpose()?;
    if let Some(ck) = &warm {
        ck.check_schema(&raw.schema)?;
    }
    let (tr, scaler) = standardize(&tr, warm.as_ref().map(|c| &c.scaler));
    let (va, _) = standardize(&va, Some(&scaler));
    let model = match &warm {
        Some(ck) => ck.model()?,
        None => {
            let mc = cfg.model.as_ref().context("config has no `model` section")?;
            Model::new(mc, &raw.schema, cfg.init_seed())?
        }
    };
    let tr_t: Vec<_> = tr.patients.iter().map(|r| model.tensors(r)).collect();
    let va_t: Vec<_> = va.patients.iter().map(|r| model.tensors(r)).collect();
    eprintln!("training on {} patients, validating on {}", tr_t.len(), va_t.len());
    let mut template = Checkpoint::new(&model, &scaler, &CohortBaseline::fit(&tr));
    template.schema.provenance = Some(prov.clone());
    let history_path = history.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("history.csv"));

    let result = fit(model, &tr_t, &va_t, &cfg.train, |r| {
        eprintln!(
            "epoch {:>3}  train {:>12.3}  validation {:>12.3}{}",
            r.epoch,
            r.train.total,
            r.validation.total,
            if r.improved { "  *" } else { "" }
        );
    });
    match result {
        Ok(outcome) => {
            save_checkpoint(out, &outcome, &template)?;
            history_table(&prov, &outcome.history)?.save(&history_path)?;
            eprintln!("best epoch {} -> {}", outcome.best_epoch, out.display());
            Ok(())
        }
        Err(InferenceError::Diverged { epoch, cause, last_good }) => {
            save_checkpoint(out, &last_good, &template)?;
            history_table(&prov, &last_good.history)?.save(&history_path)?;
            bail!("training diverged in epoch {epoch} ({cause}); last good parameters written to {}", out.display())
        }
        Err(e) => Err(e.into()),
    }
}

struct Loaded {
    ck: Checkpoint,
    model: Model,
    cfg: RunConfig,
    prov: Provenance,
    /// Filtered cohort in original units.
    raw: Cohort,
}

impl Loaded {
    fn new(inputs: &ModelInputs) -> anyhow::Result<Self> {
        let ck = read_checkpoint(&inputs.checkpoint)?;
        let stored = ck.schema.provenance.clone();
        let (cfg, prov) = match &inputs.config {
            Some(path) => load_config(path, inputs.seed)?,
            None => {
                let mut cfg: RunConfig = serde_json::from_str("{}")?;
                let stored_seed = stored.as_ref().map_or(0, |p| p.seed);
                cfg.reseed(inputs.seed.unwrap_or(stored_seed));
                let hash = stored.map(|p| p.config_sha256).unwrap_or_default();
                let seed = cfg.seed;
                (cfg, Provenance { config_sha256: hash, seed })
            }
        };
        let raw = parse_cohort(&inputs.cohort).with_context(|| format!("reading {}", inputs.cohort.display()))?;
        ck.check_schema(&raw.schema)?;
        let raw = filter_min_visits(&raw, cfg.data.min_visits);
        let model = ck.model()?;
        Ok(Self { ck, model, cfg, prov, raw })
    }

    fn standardized(&self, cohort: &Cohort) -> Cohort {
        standardize(cohort, Some(&self.ck.scaler)).0
    }

    fn trajectories(&self, cohort: &Cohort) -> anyhow::Result<Vec<LatentTrajectory>> {
        let res: Vec<_> = cohort.patients.par_iter().map(|r| latent_trajectory(&self.model, r)).collect();
        Ok(res.into_iter().collect::<Result<_, _>>()?)
    }

    fn distances(&self, trajs: &[LatentTrajectory], window: Option<usize>, z: bool) -> anyhow::Result<DistanceMatrix> {
        let mut h: Vec<Vec<Vec<f64>>> = trajs.iter().map(|t| t.h.clone()).collect();
        if z {
            h = zscore(&h);
        }
        Ok(pairwise_distances(&h, window)?)
    }
}

fn method_rows(table: &mut Table, section: &str, target: &str, metric: &str, s: &MethodScores) -> anyhow::Result<()> {
    for (method, v) in [("model", s.model), ("last_value", s.last_value), ("cohort", s.cohort)] {
        table.row([section, target, method, metric, &opt(v)])?;
    }
    Ok(())
}

fn report_table(prov: &Provenance, r: &EvalReport) -> anyhow::Result<Table> {
    let mut t = Table::new(prov, &["section", "target", "method", "metric", "value"])?;
    t.row(["summary", "all", "", "patients", &r.patients.to_string()])?;
    t.row(["summary", "all", "", "forecast_cells", &r.forecast_cells.to_string()])?;
    method_rows(&mut t, "summary", "continuous", "rmse", &r.rmse)?;
    t.row(["summary", "continuous", "model", "coverage", &opt(r.coverage)])?;
    method_rows(&mut t, "summary", "concepts", "macro_f1", &r.concept_macro_f1)?;
    t.row(["summary", "concepts", "model", "calibration_max_deviation", &opt(r.calibration_max_deviation)])?;
    for f in &r.continuous {
        method_rows(&mut t, "continuous", &f.name, "rmse", &f.score)?;
        if let Some(raw) = &f.rmse_raw {
            method_rows(&mut t, "continuous", &f.name, "rmse_raw", raw)?;
        }
        t.row(["continuous", &f.name, "", "cells", &f.cells.to_string()])?;
    }
    for (section, list) in [("categorical", &r.categorical), ("concept", &r.concepts)] {
        for f in list {
            method_rows(&mut t, section, &f.name, "macro_f1", &f.score)?;
            t.row([section, &f.name, "", "cells", &f.cells.to_string()])?;
        }
    }
    let curves = std::iter::once(("pooled".to_string(), &r.calibration))
        .chain(r.concept_calibration.iter().map(|(n, c)| (n.clone(), c)));
    for (name, c) in curves {
        for b in 0..c.bin_counts.len() {
            let target = format!("{name}:{b}");
            t.row(["calibration", &target, "model", "bin_lower", &num(c.bin_edges[b])])?;
            t.row(["calibration", &target, "model", "bin_upper", &num(c.bin_edges[b + 1])])?;
            t.row(["calibration", &target, "model", "mean_predicted", &opt(c.mean_predicted[b])])?;
            t.row(["calibration", &target, "model", "fraction_positive", &opt(c.fraction_positive[b])])?;
            t.row(["calibration", &target, "model", "count", &c.bin_counts[b].to_string()])?;
        }
    }
    Ok(t)
}

pub fn evaluate(inputs: &ModelInputs, report: &Path, which: SplitChoice) -> anyhow::Result<()> {
    let l = Loaded::new(inputs)?;
    let cohort = match which {
        SplitChoice::All => l.raw.clone(),
        SplitChoice::Test => split(&l.raw, l.cfg.data.split, l.cfg.split_seed())?.2,
    };
    let std = l.standardized(&cohort);
    let r = score(&l.model, &l.ck.baseline, &l.ck.scaler, &std, &l.cfg.evaluate)?;
    report_table(&l.prov, &r)?.save(report)?;
    let show = |s: &MethodScores| format!("model {} | last value {} | cohort {}", opt(s.model), opt(s.last_value), opt(s.cohort));
    eprintln!("patients {}  forecast cells {}", r.patients, r.forecast_cells);
    eprintln!("rmse      {}", show(&r.rmse));
    eprintln!("macro F1  {}", show(&r.concept_macro_f1));
    eprintln!("coverage  {}", opt(r.coverage));
    eprintln!("calibration max deviation {}", opt(r.calibration_max_deviation));
    Ok(())
}

pub fn forecast(inputs: &ModelInputs, k: &str, out: &Path, patient: Option<&str>) -> anyhow::Result<()> {
    let l = Loaded::new(inputs)?;
    let horizon = Horizon::parse(k)?;
    let mut cohort = l.raw.clone();
    if let Some(id) = patient {
        let i = cohort.find(id).with_context(|| format!("patient '{id}' not in the cohort"))?;
        cohort = cohort.with_patients(vec![cohort.patients[i].clone()]);
    }
    let std = l.standardized(&cohort);
    let schema = &l.raw.schema;
    let g = schema.num_continuous();
    let ev = &l.cfg.evaluate;
    let seed = derive_seed(ev.seed, "forecast");
    let rows: Vec<anyhow::Result<Vec<Vec<String>>>> = std
        .patients
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let raw = &cohort.patients[i];
            let t_len = rec.num_visits();
            let kk = horizon.k_for(t_len);
            let mut rng = stream(seed, "patient", i as u64);
            let p = predict(&l.model, &l.model.tensors(rec), kk, ev.mc_samples, ev.obs_samples, ev.interval, &mut rng)?;
            let mut rows = Vec::new();
            for t in 0..t_len {
                let base = vec![rec.id.clone(), kk.to_string(), t.to_string(), num(rec.times[t])];
                let mut push = |kind: &str, name: &str, class: String, vals: [String; 4], observed: String| {
                    let mut r = base.clone();
                    r.extend([kind.to_string(), name.to_string(), class]);
                    r.extend(vals);
                    r.push(observed);
                    rows.push(r);
                };
                for j in 0..g {
                    let c = &p.cont_summary[t * g + j];
                    let (mu, sd) = (l.ck.scaler.mean[j], l.ck.scaler.sd[j]);
                    let vals = [num(c.mean * sd + mu), num(c.sd * sd), num(c.lower * sd + mu), num(c.upper * sd + mu)];
                    push("continuous", schema.feature_name(j), String::new(), vals, opt(raw.x.get(t, j)));
                }
                for (j, probs) in p.cat_probs.iter().enumerate() {
                    let obs = opt(raw.x.get(t, g + j));
                    for (c, &pr) in probs.row(t).iter().enumerate() {
                        let vals = [num(pr), String::new(), String::new(), String::new()];
                        push("categorical", schema.feature_name(g + j), c.to_string(), vals, obs.clone());
                    }
                }
                for (j, probs) in p.y_probs.iter().enumerate() {
                    let Some(probs) = probs else { continue };
                    let obs = opt(raw.y.get(t, j));
                    for (c, &pr) in probs.row(t).iter().enumerate() {
                        let vals = [num(pr), String::new(), String::new(), String::new()];
                        push("concept", &schema.concepts[j].name, c.to_string(), vals, obs.clone());
                    }
                }
            }
            Ok(rows)
        })
        .collect();
    let cols = ["id", "k", "visit", "time", "kind", "name", "class", "mean", "sd", "lower", "upper", "observed"];
    let mut table = Table::new(&l.prov, &cols)?;
    for r in rows {
        for row in r? {
            table.row(&row)?;
        }
    }
    table.save(out)
}

pub fn cluster(
    inputs: &ModelInputs,
    k: Option<usize>,
    out: &Path,
    profiles: Option<&Path>,
    window: Option<usize>,
    z: bool,
) -> anyhow::Result<()> {
    let l = Loaded::new(inputs)?;
    let cc = &l.cfg.cluster;
    let k = k.unwrap_or(cc.k);
    let std = l.standardized(&l.raw);
    let trajs = l.trajectories(&std)?;
    let dist = l.distances(&trajs, window.or(cc.window), z || cc.zscore)?;
    let km = kmedoids(&dist, k, l.cfg.cluster_seed(), cc.max_iter, cc.restarts)?;
    let mut table = Table::new(&l.prov, &["id", "cluster", "medoid", "is_medoid", "distance_to_medoid"])?;
    for (i, &c) in km.assignment.iter().enumerate() {
        let m = km.medoids[c];
        table.row([
            trajs[i].id.clone(),
            c.to_string(),
            trajs[m].id.clone(),
            (i == m).to_string(),
            num(dist.get(i, m)),
        ])?;
    }
    table.save(out)?;
    for (c, &m) in km.medoids.iter().enumerate() {
        let size = km.assignment.iter().filter(|&&a| a == c).count();
        eprintln!("cluster {c}: {size} patients, medoid {}, cost {:.3}", trajs[m].id, km.cluster_cost[c]);
    }
    if let Some(path) = profiles {
        let mut table = Table::new(&l.prov, &["cluster", "medoid", "visit", "time", "concept", "class", "probability"])?;
        for (c, &m) in km.medoids.iter().enumerate() {
            let rec = &std.patients[m];
            let probs = concept_profile(&l.model, rec, &trajs[m].h)?;
            for (j, p) in probs.iter().enumerate() {
                let Some(p) = p else { continue };
                for t in 0..rec.num_visits() {
                    for (class, &v) in p.row(t).iter().enumerate() {
                        table.row([
                            c.to_string(),
                            rec.id.clone(),
                            t.to_string(),
                            num(rec.times[t]),
                            std.schema.concepts[j].name.clone(),
                            class.to_string(),
                            num(v),
                        ])?;
                    }
                }
            }
        }
        table.save(path)?;
    }
    Ok(())
}

pub fn neighbors(inputs: &ModelInputs, patient: &str, k: Option<usize>, out: Option<&Path>) -> anyhow::Result<()> {
    let l = Loaded::new(inputs)?;
    let std = l.standardized(&l.raw);
    let q = std.find(patient).with_context(|| format!("patient '{patient}' not in the cohort"))?;
    let trajs = l.trajectories(&std)?;
    let dist = l.distances(&trajs, l.cfg.cluster.window, l.cfg.cluster.zscore)?;
    let nn = knn(&dist, q, k.unwrap_or(l.cfg.cluster.neighbors))?;
    let mut table = Table::new(&l.prov, &["query", "rank", "id", "distance"])?;
    for (rank, &j) in nn.iter().enumerate() {
        table.row([patient.to_string(), (rank + 1).to_string(), trajs[j].id.clone(), num(dist.get(q, j))])?;
    }
    match out {
        Some(p) => table.save(p),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&table.into_bytes()?)?;
            Ok(())
        }
    }
}

pub fn export_latent(inputs: &ModelInputs, out: &Path) -> anyhow::Result<()> {
    let l = Loaded::new(inputs)?;
    let std = l.standardized(&l.raw);
    let trajs = l.trajectories(&std)?;
    let mut cols = vec!["id".to_string(), "visit".into(), "time".into()];
    cols.extend((0..l.model.latent_dim()).map(|j| format!("z_{j}")));
    let mut table = Table::new(&l.prov, &cols.iter().map(String::as_str).collect::<Vec<_>>())?;
    for (tr, rec) in trajs.iter().zip(&std.patients) {
        for (t, row) in tr.h.iter().enumerate() {
            let mut r = vec![tr.id.clone(), t.to_string(), num(rec.times[t])];
            r.extend(row.iter().map(|&v| num(v)));
            table.row(&r)?;
        }
    }
    table.save(out)
}

pub fn selftest(seed: u64) -> bool {
    let results = gtlvm_core::selftest::run_all(seed);
    for r in &results {
        println!("{} {:<18} {} ({:.1}s)", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail, r.seconds);
    }
    results.iter().all(|r| r.passed)
}
