//! Subject records, CSV ingestion and the landmark-time view of the data.
//!
//! A record carries the observed follow-up `T* = T ∧ C`, the event flag,
//! the marker (present only when measured at the landmark), the treatment
//! arm, baseline covariates and an optional marker-observed flag for
//! missing-at-random analyses.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// One subject's observed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    /// Observed follow-up time `T* = min(T, C)`.
    pub time: f64,
    /// True when `time` is an event (death) time, false when censored.
    pub event: bool,
    /// Marker measured at the landmark; `None` when not measured.
    pub marker: Option<f64>,
    pub treatment: u8,
    pub covariates: Vec<f64>,
    /// Explicit marker-observed flag `R`. `None` means "observed iff the
    /// marker is present".
    pub marker_observed: Option<bool>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, time: f64, event: bool, treatment: u8) -> Self {
        Self {
            id: id.into(),
            time,
            event,
            marker: None,
            treatment,
            covariates: Vec::new(),
            marker_observed: None,
        }
    }

    pub fn with_marker(mut self, marker: f64) -> Self {
        self.marker = Some(marker);
        self
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    /// Effective `R` indicator.
    pub fn r(&self) -> bool {
        self.marker_observed.unwrap_or(self.marker.is_some())
    }

    /// Alive and under observation past the landmark: `I(t < T*)`.
    #[inline]
    pub fn alive_at(&self, t: f64) -> bool {
        self.time > t
    }

    /// The marker as seen at landmark `t`: only for subjects alive and
    /// uncensored past `t` whose marker was measured. Estimators read the
    /// marker exclusively through this accessor.
    #[inline]
    pub fn marker_at(&self, t: f64) -> Option<f64> {
        if self.time > t && self.r() {
            self.marker
        } else {
            None
        }
    }

    fn check(&self, row: usize, dim: usize) -> Result<()> {
        let at = || format!("row {} (id {:?})", row, self.id);
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(validation(format!(
                "{}: follow-up time must be finite and >= 0, got {}",
                at(),
                self.time
            )));
        }
        if self.treatment > 1 {
            return Err(validation(format!(
                "{}: treatment must be 0 or 1, got {}",
                at(),
                self.treatment
            )));
        }
        if self.covariates.len() != dim {
            return Err(validation(format!(
                "{}: expected {} covariates, got {}",
                at(),
                dim,
                self.covariates.len()
            )));
        }
        if self.covariates.iter().any(|c| !c.is_finite()) {
            return Err(validation(format!("{}: non-finite covariate", at())));
        }
        if let Some(m) = self.marker {
            if !m.is_finite() {
                return Err(validation(format!("{}: non-finite marker", at())));
            }
            if self.marker_observed == Some(false) {
                return Err(validation(format!(
                    "{}: marker present but marker-observed flag is 0",
                    at()
                )));
            }
        }
        Ok(())
    }
}

/// A validated collection of records sharing covariate names and order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    covariate_names: Vec<String>,
    records: Vec<SubjectRecord>,
}

impl Dataset {
    pub fn new(covariate_names: Vec<String>, records: Vec<SubjectRecord>) -> Result<Self> {
        let dim = covariate_names.len();
        for (i, r) in records.iter().enumerate() {
            r.check(i, dim)?;
        }
        Ok(Self {
            covariate_names,
            records,
        })
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> &SubjectRecord {
        &self.records[i]
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.records.len()).collect()
    }

    pub fn arm_count(&self, a: u8) -> usize {
        self.records.iter().filter(|r| r.treatment == a).count()
    }

    /// New dataset containing the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            covariate_names: self.covariate_names.clone(),
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }
}

/// Marker missingness handling for survivors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingnessMode {
    /// Every survivor must have a measured marker.
    #[default]
    None,
    /// Marker missing at random among survivors given (A, L).
    Mar,
}

/// Per-subject observed-data functionals at landmark `t` and threshold `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandmarkView {
    /// `T*_t = min(t, T*)`.
    pub t_star_t: f64,
    /// `Δ_t = I(T ∧ t <= C)`.
    pub delta_t: bool,
    /// `I(t < T*)`.
    pub alive_uncensored: bool,
    /// `I(Y > y)`; only for subjects alive at `t` with an observed marker.
    pub above_threshold: Option<bool>,
}

/// Landmark view of every subject, with input-consistency checks.
///
/// A follow-up time equal to `t` counts as *not* alive past `t`.
pub fn landmark_view(data: &Dataset, t: f64, y: f64, mode: MissingnessMode) -> Result<Vec<LandmarkView>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(validation(format!("landmark time must be > 0, got {t}")));
    }
    let inconsistent: Vec<&str> = data
        .records
        .iter()
        .filter(|r| r.marker.is_some() && !r.alive_at(t))
        .map(|r| r.id.as_str())
        .collect();
    if !inconsistent.is_empty() {
        return Err(validation(format!(
            "marker recorded for subjects not alive and under observation past t = {t}: {}",
            abbreviate(&inconsistent)
        )));
    }
    check_markers_available(data, t, mode)?;
    Ok(data
        .records
        .iter()
        .map(|r| {
            let alive = r.alive_at(t);
            LandmarkView {
                t_star_t: r.time.min(t),
                delta_t: alive || r.event,
                alive_uncensored: alive,
                above_threshold: r.marker_at(t).map(|m| m > y),
            }
        })
        .collect())
}

/// Complete-data analyses need a marker for every survivor.
pub fn check_markers_available(data: &Dataset, t: f64, mode: MissingnessMode) -> Result<()> {
    if mode == MissingnessMode::Mar {
        return Ok(());
    }
    let missing: Vec<&str> = data
        .records
        .iter()
        .filter(|r| r.alive_at(t) && r.marker_at(t).is_none())
        .map(|r| r.id.as_str())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(validation(format!(
            "{} subject(s) alive at t = {t} have no marker and missingness mode is none: {}",
            missing.len(),
            abbreviate(&missing)
        )))
    }
}

fn abbreviate(ids: &[&str]) -> String {
    const SHOW: usize = 20;
    let mut s = ids.iter().take(SHOW).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOW {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOW));
    }
    s
}

/// Column names used to read a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub time: String,
    pub status: String,
    pub marker: String,
    pub treatment: String,
    /// Covariate columns; `None` takes every column not otherwise mapped.
    pub covariates: Option<Vec<String>>,
    /// Optional marker-observed column.
    pub marker_observed: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            status: "status".into(),
            marker: "marker".into(),
            treatment: "treatment".into(),
            covariates: None,
            marker_observed: Some("r".into()),
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let status_col = col(&schema.status)?;
    let treat_col = col(&schema.treatment)?;
    let marker_col = index.get(schema.marker.as_str()).copied();
    let r_col = schema.marker_observed.as_deref().and_then(|n| index.get(n).copied());

    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => {
            let mapped = [
                Some(id_col),
                Some(time_col),
                Some(status_col),
                Some(treat_col),
                marker_col,
                r_col,
            ];
            headers
                .iter()
                .enumerate()
                .filter(|(i, _)| !mapped.contains(&Some(*i)))
                .map(|(_, h)| h.to_string())
                .collect()
        }
    };
    let cov_cols = covariate_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let id = field(id_col).to_string();
        let at = |what: &str, raw: &str| validation(format!("row {row} (id {id:?}): malformed {what} {raw:?}"));
        let num = |c: usize, what: &str| -> Result<f64> {
            let raw = field(c);
            raw.parse::<f64>().map_err(|_| at(what, raw))
        };
        let flag = |c: usize, what: &str| -> Result<bool> {
            match field(c) {
                "0" => Ok(false),
                "1" => Ok(true),
                raw => Err(at(what, raw)),
            }
        };
        let time = num(time_col, "time")?;
        let event = flag(status_col, "status (expected 0 or 1)")?;
        let treatment = flag(treat_col, "treatment (expected 0 or 1)")? as u8;
        let marker = match marker_col.map(field) {
            None | Some("") => None,
            Some(_) => Some(num(marker_col.unwrap(), "marker")?),
        };
        let marker_observed = match r_col.map(field) {
            None | Some("") => None,
            Some(_) => Some(flag(r_col.unwrap(), "marker-observed flag")?),
        };
        let covariates = cov_cols
            .iter()
            .zip(&covariate_names)
            .map(|(&c, name)| num(c, &format!("covariate {name:?}")))
            .collect::<Result<Vec<_>>>()?;
        let record = SubjectRecord {
            id,
            time,
            event,
            marker,
            treatment,
            covariates,
            marker_observed,
        };
        record.check(row, covariate_names.len())?;
        records.push(record);
    }
    Dataset::new(covariate_names, records)
}

/// Writes a dataset in the default column layout
/// (`id,time,status,marker,treatment,<covariates...>[,r]`).
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let with_r = data.records.iter().any(|r| r.marker_observed.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id", "time", "status", "marker", "treatment"];
    header.extend(data.covariate_names.iter().map(String::as_str));
    if with_r {
        header.push("r");
    }
    w.write_record(&header)?;
    for r in &data.records {
        let mut row = vec![
            r.id.clone(),
            r.time.to_string(),
            (r.event as u8).to_string(),
            r.marker.map(|m| m.to_string()).unwrap_or_default(),
            r.treatment.to_string(),
        ];
        row.extend(r.covariates.iter().map(|c| c.to_string()));
        if with_r {
            row.push(r.marker_observed.map(|b| (b as u8).to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(data, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(time: f64, event: bool) -> SubjectRecord {
        SubjectRecord::new(format!("s{time}"), time, event, 0)
    }

    #[test]
    fn reads_three_rows() {
        let csv = "id,time,status,marker,treatment,age\n\
                   a,1.0,1,,0,60\n\
                   b,2.0,0,,1,61\n\
                   c,0.5,1,,0,62\n";
        let d = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.covariate_names(), ["age"]);
        let times: Vec<f64> = d.records().iter().map(|r| r.time).collect();
        assert_eq!(times, [1.0, 2.0, 0.5]);
        let status: Vec<bool> = d.records().iter().map(|r| r.event).collect();
        assert_eq!(status, [true, false, true]);
    }

    #[test]
    fn negative_time_names_the_row() {
        let csv = "id,time,status,marker,treatment\nok,1,1,,0\nbad,-1,1,,0\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("row 1") && msg.contains("bad"), "{msg}");
    }

    #[test]
    fn treatment_outside_binary_rejected() {
        let csv = "id,time,status,marker,treatment\na,1,1,,2\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "id,time,marker,treatment\na,1,,0\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn malformed_numeric_rejected_with_row() {
        let csv = "id,time,status,marker,treatment,x\na,1,1,,0,1.5\nb,2,0,,1,abc\n";
        let err = read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn landmark_three_cases() {
        let d = Dataset::new(vec![], vec![rec(3.0, false), rec(1.5, false), rec(1.5, true)]).unwrap();
        // the survivor needs a marker for a complete-data view
        let mut recs = d.records().to_vec();
        recs[0].marker = Some(50.0);
        let d = Dataset::new(vec![], recs).unwrap();
        let v = landmark_view(&d, 2.0, 45.0, MissingnessMode::None).unwrap();
        assert!(v[0].alive_uncensored && v[0].delta_t);
        assert_eq!(v[0].above_threshold, Some(true));
        assert!(!v[1].alive_uncensored && !v[1].delta_t);
        assert!(!v[2].alive_uncensored && v[2].delta_t);
        assert_eq!(v[2].above_threshold, None);
        assert_eq!(v[1].t_star_t, 1.5);
        assert_eq!(v[0].t_star_t, 2.0);
    }

    #[test]
    fn tie_at_landmark_is_not_alive() {
        let d = Dataset::new(vec![], vec![rec(2.0, false)]).unwrap();
        let v = landmark_view(&d, 2.0, 0.0, MissingnessMode::None).unwrap();
        assert!(!v[0].alive_uncensored);
    }

    #[test]
    fn survivor_without_marker_is_an_error_listing_ids() {
        let d = Dataset::new(vec![], vec![rec(3.0, false), rec(4.0, true)]).unwrap();
        let err = landmark_view(&d, 2.0, 0.0, MissingnessMode::None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("s3") && msg.contains("s4"), "{msg}");
        assert!(landmark_view(&d, 2.0, 0.0, MissingnessMode::Mar).is_ok());
    }

    #[test]
    fn marker_on_dead_subject_rejected() {
        let d = Dataset::new(vec![], vec![rec(1.0, true).with_marker(3.0)]).unwrap();
        assert!(landmark_view(&d, 2.0, 0.0, MissingnessMode::None).is_err());
    }

    #[test]
    fn marker_with_r_zero_rejected() {
        let mut r = rec(3.0, false).with_marker(1.0);
        r.marker_observed = Some(false);
        assert!(Dataset::new(vec![], vec![r]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut recs = vec![
            rec(3.25, false)
                .with_marker(47.123456789)
                .with_covariates(vec![46.1, 0.0]),
            rec(0.1, true).with_covariates(vec![1.0 / 3.0, 1.0]),
        ];
        recs[1].marker_observed = Some(true);
        let d = Dataset::new(vec!["L1".into(), "L2".into()], recs).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(back, d);
    }
}
