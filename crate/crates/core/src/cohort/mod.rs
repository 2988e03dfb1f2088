//! Patient records, the line-delimited cohort format, standardization and
//! patient-level splitting.

mod io;
mod scaler;
mod schema;
mod split;

pub use io::{parse_cohort, parse_cohort_str, read_cohort, serialize_cohort, write_cohort_string};
pub use scaler::{standardize, ScalerStats};
pub use schema::{CategoricalFeature, ConceptSpec, ContinuousFeature, FeatureSchema, Provenance, StaticField, StaticKind};
pub use split::{filter_min_visits, split};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("line {line}, patient '{patient}'{}: {message}", row.map(|r| format!(", row {r}")).unwrap_or_default())]
    Record { line: usize, patient: String, row: Option<usize>, message: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("{0}")]
    Split(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major matrix where each cell carries an observed flag.
///
/// Unobserved cells hold `NaN` so that any accidental read surfaces as a
/// non-finite value.
#[derive(Clone, Debug)]
pub struct MaskedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl MaskedMatrix {
    pub fn unobserved(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![f64::NAN; rows * cols], observed: vec![false; rows * cols] }
    }

    pub fn from_options(rows: &[Vec<Option<f64>>], cols: usize) -> Self {
        let mut m = Self::unobserved(rows.len(), cols);
        for (t, row) in rows.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    m.set(t, d, *v);
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, t: usize, d: usize) -> Option<f64> {
        let i = t * self.cols + d;
        self.observed[i].then_some(self.values[i])
    }

    pub fn is_observed(&self, t: usize, d: usize) -> bool {
        self.observed[t * self.cols + d]
    }

    pub fn set(&mut self, t: usize, d: usize, v: f64) {
        let i = t * self.cols + d;
        self.values[i] = v;
        self.observed[i] = true;
    }

    pub fn clear(&mut self, t: usize, d: usize) {
        let i = t * self.cols + d;
        self.values[i] = f64::NAN;
        self.observed[i] = false;
    }

    /// Overwrites the stored value of an unobserved cell without observing
    /// it. Used to verify that masked cells are never read.
    pub fn set_hidden_value(&mut self, t: usize, d: usize, v: f64) {
        let i = t * self.cols + d;
        assert!(!self.observed[i], "cell ({t},{d}) is observed");
        self.values[i] = v;
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn row_options(&self, t: usize) -> Vec<Option<f64>> {
        (0..self.cols).map(|d| self.get(t, d)).collect()
    }

    pub fn to_options(&self) -> Vec<Vec<Option<f64>>> {
        (0..self.rows).map(|t| self.row_options(t)).collect()
    }
}

impl PartialEq for MaskedMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.to_options() == other.to_options()
    }
}

/// One patient's trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub static_s: Vec<f64>,
    /// Visit times in years, strictly increasing.
    pub times: Vec<f64>,
    /// `T × D`: continuous features first, then categorical class indices.
    pub x: MaskedMatrix,
    /// `T × P` concept class indices.
    pub y: MaskedMatrix,
    /// Optional `T × M` medication matrix; stored but not modelled.
    pub meds: Option<Vec<Vec<f64>>>,
}

impl PatientRecord {
    pub fn num_visits(&self) -> usize {
        self.times.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(schema: FeatureSchema, patients: Vec<PatientRecord>) -> Self {
        Self { schema, patients }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn with_patients(&self, patients: Vec<PatientRecord>) -> Self {
        Self { schema: self.schema.clone(), patients }
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.patients.iter().position(|p| p.id == id)
    }
}
