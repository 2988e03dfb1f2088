use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{baseline_last_concepts, baseline_last_value, CohortBaseline};
use super::metrics::{calibration_curve, coverage, macro_f1, rmse, CalibrationCurve};
use super::predict::{predict, IntervalMode};
use super::ForecastError;
use crate::cohort::{Cohort, ScalerStats};
use crate::model::Model;
use crate::rng::{derive_seed, stream};

/// Number of conditioning visits per patient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// `k = ⌈f·T⌉`
    Fraction(f64),
    Visits(usize),
}

impl Horizon {
    pub fn k_for(&self, t_len: usize) -> usize {
        match *self {
            Horizon::Fraction(f) => ((f * t_len as f64).ceil() as usize).min(t_len),
            Horizon::Visits(k) => k.min(t_len),
        }
    }

    /// Parses `3` as a visit count and `0.5` as a fraction.
    pub fn parse(s: &str) -> Result<Self, ForecastError> {
        if let Ok(k) = s.parse::<usize>() {
            return Ok(Horizon::Visits(k));
        }
        match s.parse::<f64>() {
            Ok(f) if (0.0..=1.0).contains(&f) => Ok(Horizon::Fraction(f)),
            _ => Err(ForecastError::Contract(format!("horizon '{s}' is neither a visit count nor a fraction in [0, 1]"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub horizon: Horizon,
    pub mc_samples: usize,
    pub obs_samples: usize,
    pub interval: IntervalMode,
    pub calibration_bins: usize,
    /// Bins with fewer points are reported but not scored.
    pub min_bin_count: usize,
    pub per_concept_calibration: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: Horizon::Fraction(0.5),
            mc_samples: 50,
            obs_samples: 5,
            interval: IntervalMode::Gaussian,
            calibration_bins: 20,
            min_bin_count: 50,
            per_concept_calibration: false,
            seed: 0,
        }
    }
}

/// Scores of one forecaster on one target.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub model: Option<f64>,
    pub last_value: Option<f64>,
    pub cohort: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScores {
    pub name: String,
    /// RMSE in standardized units (continuous) or macro F1 (categorical).
    pub score: MethodScores,
    /// RMSE in original units; continuous features only.
    pub rmse_raw: Option<MethodScores>,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub patients: usize,
    pub forecast_cells: usize,
    /// Pooled over all continuous forecast cells, standardized units.
    pub rmse: MethodScores,
    pub coverage: Option<f64>,
    pub continuous: Vec<FeatureScores>,
    pub categorical: Vec<FeatureScores>,
    /// Macro F1 per concept over forecast visits.
    pub concepts: Vec<FeatureScores>,
    /// Mean over concepts of their macro F1.
    pub concept_macro_f1: MethodScores,
    pub calibration: CalibrationCurve,
    pub calibration_max_deviation: Option<f64>,
    pub concept_calibration: Vec<(String, CalibrationCurve)>,
}

/// Forecast-cell contributions of one patient.
#[derive(Default)]
struct PatientEval {
    cells: usize,
    cont: Vec<Vec<(f64, f64, f64, f64)>>, // per feature: truth, model, last, cohort
    intervals: Vec<(f64, f64, f64)>, // lower, upper, truth
    cat: Vec<Vec<(usize, usize, usize, usize)>>,
    concepts: Vec<Vec<(usize, usize, usize, usize)>>,
    calib: Vec<Vec<(f64, bool)>>,
}

fn evaluate_patient(
    model: &Model,
    baseline: &CohortBaseline,
    cohort: &Cohort,
    index: usize,
    config: &EvalConfig,
    seed: u64,
) -> Result<PatientEval, ForecastError> {
    let record = &cohort.patients[index];
    let schema = &cohort.schema;
    let g = schema.num_continuous();
    let t_len = record.num_visits();
    let k = config.horizon.k_for(t_len);
    let mut out = PatientEval {
        cont: vec![Vec::new(); g],
        cat: vec![Vec::new(); schema.num_categorical()],
        concepts: vec![Vec::new(); schema.p()],
        calib: vec![Vec::new(); schema.p()],
        ..Default::default()
    };
    if k >= t_len {
        return Ok(out);
    }
    let pt = model.tensors(record);
    let mut rng = stream(seed, "predict", index as u64);
    let pred = predict(model, &pt, k, config.mc_samples, config.obs_samples, config.interval, &mut rng)?;
    let last_x = baseline_last_value(record, k, baseline);
    let last_y = baseline_last_concepts(record, k, baseline);
    let mut cohort_rng = stream(seed, "baseline-cohort", index as u64);
    let argmax = |row: &[f64]| {
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        best
    };
    for t in k..t_len {
        // one cohort draw per visit keeps the stream independent of masks
        let (cx, cy) = baseline.sample(&mut cohort_rng);
        for d in 0..g {
            if let Some(v) = record.x.get(t, d) {
                let s = &pred.cont_summary[t * g + d];
                out.cont[d].push((v, s.mean, last_x[d], baseline.cont_mean[d]));
                out.intervals.push((s.lower, s.upper, v));
                out.cells += 1;
            }
        }
        for j in 0..schema.num_categorical() {
            if let Some(v) = record.x.get(t, g + j) {
                let p = argmax(pred.cat_probs[j].row(t));
                out.cat[j].push((v as usize, p, last_x[g + j] as usize, cx[g + j] as usize));
            }
        }
        for j in 0..schema.p() {
            let (Some(v), Some(probs)) = (record.y.get(t, j), pred.y_probs[j].as_ref()) else { continue };
            let truth = v as usize;
            let row = probs.row(t);
            out.concepts[j].push((truth, argmax(row), last_y[j], cy[j]));
            for (c, &p) in row.iter().enumerate() {
                out.calib[j].push((p.clamp(0.0, 1.0), c == truth));
            }
        }
    }
    Ok(out)
}

fn f1_scores(rows: &[(usize, usize, usize, usize)], classes: usize) -> MethodScores {
    if rows.is_empty() {
        return MethodScores::default();
    }
    let truth: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let col = |f: fn(&(usize, usize, usize, usize)) -> usize| {
        let p: Vec<usize> = rows.iter().map(f).collect();
        macro_f1(&p, &truth, classes).ok()
    };
    MethodScores { model: col(|r| r.1), last_value: col(|r| r.2), cohort: col(|r| r.3) }
}

fn rmse_scores(rows: &[(f64, f64, f64, f64)], scale: impl Fn(f64) -> f64) -> MethodScores {
    let truth: Vec<f64> = rows.iter().map(|r| scale(r.0)).collect();
    let col = |f: fn(&(f64, f64, f64, f64)) -> f64| {
        let p: Vec<f64> = rows.iter().map(|r| scale(f(r))).collect();
        rmse(&p, &truth)
    };
    MethodScores { model: col(|r| r.1), last_value: col(|r| r.2), cohort: col(|r| r.3) }
}

fn mean_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Forecasts every patient of a standardized cohort from its first `k`
/// visits and scores the remaining visits against both baselines.
pub fn evaluate(
    model: &Model,
    baseline: &CohortBaseline,
    scaler: &ScalerStats,
    cohort: &Cohort,
    config: &EvalConfig,
) -> Result<EvalReport, ForecastError> {
    let seed = derive_seed(config.seed, "evaluate");
    let per: Vec<Result<PatientEval, ForecastError>> =
        (0..cohort.len()).into_par_iter().map(|i| evaluate_patient(model, baseline, cohort, i, config, seed)).collect();
    let schema = &cohort.schema;
    let g = schema.num_continuous();
    let mut cont = vec![Vec::new(); g];
    let mut cat = vec![Vec::new(); schema.num_categorical()];
    let mut concepts = vec![Vec::new(); schema.p()];
    let mut calib = vec![Vec::new(); schema.p()];
    let mut intervals = Vec::new();
    let mut cells = 0;
    for r in per {
        let r = r?;
        cells += r.cells;
        intervals.extend(r.intervals);
        for (a, b) in cont.iter_mut().zip(r.cont) {
            a.extend(b);
        }
        for (a, b) in cat.iter_mut().zip(r.cat) {
            a.extend(b);
        }
        for (a, b) in concepts.iter_mut().zip(r.concepts) {
            a.extend(b);
        }
        for (a, b) in calib.iter_mut().zip(r.calib) {
            a.extend(b);
        }
    }

    let pooled: Vec<(f64, f64, f64, f64)> = cont.iter().flatten().copied().collect();
    let cov = if intervals.is_empty() {
        None
    } else {
        let lower: Vec<f64> = intervals.iter().map(|c| c.0).collect();
        let upper: Vec<f64> = intervals.iter().map(|c| c.1).collect();
        let truth: Vec<f64> = intervals.iter().map(|c| c.2).collect();
        Some(coverage(&lower, &upper, &truth, &vec![true; truth.len()])?)
    };

    let continuous = cont
        .iter()
        .enumerate()
        .map(|(d, rows)| FeatureScores {
            name: schema.feature_name(d).to_string(),
            score: rmse_scores(rows, |v| v),
            rmse_raw: Some(rmse_scores(rows, |v| v * scaler.sd[d])),
            cells: rows.len(),
        })
        .collect();
    let categorical = cat
        .iter()
        .enumerate()
        .map(|(j, rows)| FeatureScores {
            name: schema.categorical_features[j].name.clone(),
            score: f1_scores(rows, schema.categorical_features[j].num_classes),
            rmse_raw: None,
            cells: rows.len(),
        })
        .collect::<Vec<_>>();
    let concept_scores: Vec<FeatureScores> = concepts
        .iter()
        .enumerate()
        .map(|(j, rows)| FeatureScores {
            name: schema.concepts[j].name.clone(),
            score: f1_scores(rows, schema.concepts[j].num_classes),
            rmse_raw: None,
            cells: rows.len(),
        })
        .collect();
    let concept_macro_f1 = MethodScores {
        model: mean_of(concept_scores.iter().map(|c| c.score.model)),
        last_value: mean_of(concept_scores.iter().map(|c| c.score.last_value)),
        cohort: mean_of(concept_scores.iter().map(|c| c.score.cohort)),
    };

    let (probs, pos): (Vec<f64>, Vec<bool>) = calib.iter().flatten().copied().unzip();
    let calibration = calibration_curve(&probs, &pos, config.calibration_bins)?;
    let calibration_max_deviation = calibration.max_deviation(config.min_bin_count);
    let mut concept_calibration = Vec::new();
    if config.per_concept_calibration {
        for (j, rows) in calib.iter().enumerate() {
            let (p, y): (Vec<f64>, Vec<bool>) = rows.iter().copied().unzip();
            concept_calibration.push((schema.concepts[j].name.clone(), calibration_curve(&p, &y, config.calibration_bins)?));
        }
    }

    Ok(EvalReport {
        patients: cohort.len(),
        forecast_cells: cells,
        rmse: rmse_scores(&pooled, |v| v),
        coverage: cov,
        continuous,
        categorical,
        concepts: concept_scores,
        concept_macro_f1,
        calibration,
        calibration_max_deviation,
        concept_calibration,
    })
}
