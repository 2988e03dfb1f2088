use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cohort, CohortError, FeatureSchema, MaskedMatrix, PatientRecord};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPatient {
    id: String,
    s: Vec<f64>,
    tau: Vec<f64>,
    x: Vec<Vec<Option<f64>>>,
    y: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<Vec<Vec<f64>>>,
}

pub fn parse_cohort(path: impl AsRef<Path>) -> Result<Cohort, CohortError> {
    let file = std::fs::File::open(path)?;
    read_cohort(file)
}

pub fn parse_cohort_str(text: &str) -> Result<Cohort, CohortError> {
    read_cohort(text.as_bytes())
}

pub fn read_cohort(reader: impl Read) -> Result<Cohort, CohortError> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let schema = loop {
        let Some((i, line)) = lines.next() else {
            return Err(CohortError::Header { line: 1, message: "missing schema header".into() });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema: FeatureSchema =
            serde_json::from_str(&line).map_err(|e| CohortError::Header { line: i + 1, message: e.to_string() })?;
        schema.validate().map_err(|e| CohortError::Header { line: i + 1, message: e.to_string() })?;
        break schema;
    };
    let mut patients = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPatient = serde_json::from_str(&line).map_err(|e| CohortError::Record {
            line: i + 1,
            patient: "?".into(),
            row: None,
            message: e.to_string(),
        })?;
        patients.push(validate_patient(&schema, raw, i + 1)?);
    }
    Ok(Cohort { schema, patients })
}

fn validate_patient(schema: &FeatureSchema, raw: RawPatient, line: usize) -> Result<PatientRecord, CohortError> {
    let err = |row: Option<usize>, message: String| CohortError::Record { line, patient: raw.id.clone(), row, message };
    let t = raw.tau.len();
    if t == 0 {
        return Err(err(None, "patient has no visits".into()));
    }
    if raw.s.len() != schema.s() {
        return Err(err(None, format!("{} static values, schema has {}", raw.s.len(), schema.s())));
    }
    if raw.s.iter().any(|v| !v.is_finite()) {
        return Err(err(None, "non-finite static value".into()));
    }
    for (k, w) in raw.tau.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(err(Some(k + 1), "non-increasing times".into()));
        }
    }
    if raw.tau.iter().any(|v| !v.is_finite()) {
        return Err(err(None, "non-finite visit time".into()));
    }
    if raw.x.len() != t || raw.y.len() != t {
        return Err(err(None, format!("{t} visit times but {} x rows and {} y rows", raw.x.len(), raw.y.len())));
    }
    let nc = schema.num_continuous();
    for (r, row) in raw.x.iter().enumerate() {
        if row.len() != schema.d() {
            return Err(err(Some(r), format!("x row has {} cells, schema has D = {}", row.len(), schema.d())));
        }
        for (d, v) in row.iter().enumerate() {
            let Some(v) = v else { continue };
            if !v.is_finite() {
                return Err(err(Some(r), format!("non-finite value in column '{}'", schema.feature_name(d))));
            }
            if d >= nc {
                let k = schema.categorical_features[d - nc].num_classes;
                check_class(*v, k).map_err(|m| err(Some(r), format!("feature '{}': {m}", schema.feature_name(d))))?;
            }
        }
    }
    for (r, row) in raw.y.iter().enumerate() {
        if row.len() != schema.p() {
            return Err(err(Some(r), format!("y row has {} cells, schema has P = {}", row.len(), schema.p())));
        }
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                let c = &schema.concepts[j];
                check_class(*v, c.num_classes).map_err(|m| err(Some(r), format!("concept '{}': {m}", c.name)))?;
            }
        }
    }
    if let Some(p) = &raw.p {
        if p.len() != t {
            return Err(err(None, format!("{} medication rows for {t} visits", p.len())));
        }
    }
    Ok(PatientRecord {
        x: MaskedMatrix::from_options(&raw.x, schema.d()),
        y: MaskedMatrix::from_options(&raw.y, schema.p()),
        id: raw.id,
        static_s: raw.s,
        times: raw.tau,
        meds: raw.p,
    })
}

fn check_class(v: f64, k: usize) -> Result<(), String> {
    if v.fract() != 0.0 || v < 0.0 || v >= k as f64 {
        return Err(format!("class value {v} out of range for {k} classes"));
    }
    Ok(())
}

pub fn serialize_cohort(cohort: &Cohort, mut w: impl Write) -> Result<(), CohortError> {
    let mut schema = cohort.schema.clone();
    schema.stamp_counts();
    writeln!(w, "{}", serde_json::to_string(&schema).map_err(std::io::Error::other)?)?;
    for p in &cohort.patients {
        let raw = RawPatient {
            id: p.id.clone(),
            s: p.static_s.clone(),
            tau: p.times.clone(),
            x: p.x.to_options(),
            y: p.y.to_options(),
            p: p.meds.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&raw).map_err(std::io::Error::other)?)?;
    }
    Ok(())
}

pub fn write_cohort_string(cohort: &Cohort) -> String {
    let mut buf = Vec::new();
    serialize_cohort(cohort, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"continuous_features":[{"name":"fvc","unit":"%"}],"categorical_features":[{"name":"ild","num_classes":4}],"concepts":[{"name":"lung_inv","num_classes":2,"group":"lung"}],"static_fields":[{"name":"sex","kind":"binary"}]}"#;

    fn cohort_text(body: &str) -> String {
        format!("{HEADER}\n{body}\n")
    }

    #[test]
    fn null_cell_becomes_unobserved() {
        let text = cohort_text(r#"{"id":"a","s":[1],"tau":[0,1.5],"x":[[80,1],[null,2]],"y":[[0],[null]]}"#);
        let c = parse_cohort_str(&text).unwrap();
        let p = &c.patients[0];
        assert_eq!(p.x.observed_count(), 3);
        assert!(!p.x.is_observed(1, 0));
        assert_eq!(p.x.get(1, 1), Some(2.0));
    }

    #[test]
    fn non_increasing_times_rejected() {
        let text = cohort_text(r#"{"id":"b7","s":[1],"tau":[1.0,1.0],"x":[[80,1],[70,2]],"y":[[0],[1]]}"#);
        let e = parse_cohort_str(&text).unwrap_err().to_string();
        assert!(e.contains("non-increasing times"), "{e}");
        assert!(e.contains("b7") && e.contains("row 1"), "{e}");
    }

    #[test]
    fn out_of_range_class_rejected() {
        let text = cohort_text(r#"{"id":"c","s":[0],"tau":[0],"x":[[80,5]],"y":[[0]]}"#);
        let e = parse_cohort_str(&text).unwrap_err().to_string();
        assert!(e.contains("out of range"), "{e}");
        let text = cohort_text(r#"{"id":"c","s":[0],"tau":[0],"x":[[80,1.5]],"y":[[0]]}"#);
        assert!(parse_cohort_str(&text).is_err());
    }

    #[test]
    fn schema_mismatch_rejected() {
        let text = cohort_text(r#"{"id":"d","s":[0],"tau":[0],"x":[[80]],"y":[[0]]}"#);
        assert!(parse_cohort_str(&text).unwrap_err().to_string().contains("D = 2"));
        let bad_header = r#"{"continuous_features":[],"categorical_features":[{"name":"k","num_classes":1}],"concepts":[],"static_fields":[]}"#;
        assert!(parse_cohort_str(bad_header).is_err());
        let wrong_count = r#"{"continuous_features":[],"categorical_features":[],"concepts":[],"static_fields":[],"D":3}"#;
        assert!(parse_cohort_str(wrong_count).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = cohort_text(r#"{"id":"e","s":[0],"tau":[0],"x":[[80,1]],"y":[[0]],"extra":1}"#);
        assert!(parse_cohort_str(&text).is_err());
    }

    #[test]
    fn medications_round_trip() {
        let text = cohort_text(r#"{"id":"m","s":[0],"tau":[0,0.5],"x":[[80,1],[null,null]],"y":[[null],[1]],"p":[[1,0],[0,1]]}"#);
        let c = parse_cohort_str(&text).unwrap();
        let again = parse_cohort_str(&write_cohort_string(&c)).unwrap();
        assert_eq!(again.patients, c.patients);
        assert_eq!(again.patients[0].meds, Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]));
    }
}
