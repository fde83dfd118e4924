use serde::{Deserialize, Serialize};

use super::cells::CellTable;
use super::glm::{fit_binary, BinaryGlm, Link};
use crate::data::Dataset;
use crate::error::{estimation, Result};

/// Design of the binary regression for `G(y | A, L) = P(Y > y | T > t, A, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeDesign {
    /// One probability for everyone.
    Intercept,
    /// One probability per arm.
    InterceptPerArm,
    /// Intercept, treatment and covariate main effects.
    MainEffects,
    /// Main effects plus treatment-by-covariate interactions (separate
    /// regressions per arm).
    Interaction,
    /// Empirical proportions per arm and covariate cell.
    Cells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub design: OutcomeDesign,
    pub link: Link,
    /// Covariate columns; `None` means all.
    #[serde(default)]
    pub covariates: Option<Vec<usize>>,
}

impl OutcomeSpec {
    pub fn new(design: OutcomeDesign, link: Link) -> Self {
        Self {
            design,
            link,
            covariates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomePart {
    Constant(f64),
    Glm(BinaryGlm),
}

impl OutcomePart {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            OutcomePart::Constant(p) => *p,
            OutcomePart::Glm(g) => g.predict(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFit {
    pub link: Link,
    pub design: OutcomeDesign,
    pub columns: Vec<usize>,
    pub y: f64,
    /// Pooled model (index 0) or one per arm.
    pub parts: Vec<OutcomePart>,
    cells: Option<CellTable>,
}

impl OutcomeFit {
    /// `G(y | a, l)`.
    pub fn predict(&self, a: u8, l: &[f64]) -> f64 {
        if let Some(t) = &self.cells {
            return t.lookup(Some(a), l).unwrap_or(f64::NAN);
        }
        let cov = self.columns.iter().map(|&j| l[j]);
        match self.design {
            OutcomeDesign::Intercept => self.parts[0].predict(&[]),
            OutcomeDesign::InterceptPerArm => self.parts[a as usize].predict(&[]),
            OutcomeDesign::MainEffects => {
                let x: Vec<f64> = std::iter::once(a as f64).chain(cov).collect();
                self.parts[0].predict(&x)
            }
            OutcomeDesign::Interaction => {
                let x: Vec<f64> = cov.collect();
                self.parts[a as usize].predict(&x)
            }
            OutcomeDesign::Cells => unreachable!(),
        }
    }
}

/// Rows of `rows` alive past `t` with an observed marker.
pub(crate) fn outcome_rows(data: &Dataset, rows: &[usize], t: f64) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&i| data.get(i).marker_at(t).is_some())
        .collect()
}

fn fit_part(x: &[Vec<f64>], resp: &[bool], link: Link, what: &str) -> Result<OutcomePart> {
    if resp.is_empty() {
        return Err(estimation(format!(
            "outcome model: no survivors with an observed marker{what}"
        )));
    }
    let pos = resp.iter().filter(|&&b| b).count();
    if pos == 0 || pos == resp.len() {
        log::warn!("outcome model: all responses identical{what}; using the constant class probability");
        return Ok(OutcomePart::Constant((pos > 0) as u8 as f64));
    }
    fit_binary(x, resp, link)
        .map(OutcomePart::Glm)
        .map_err(|e| estimation(format!("outcome model{what}: {e}")))
}

/// Fits `P(Y > y | T > t, A, L)` among survivors past `t` whose marker was
/// observed.
pub fn fit_outcome(data: &Dataset, rows: &[usize], t: f64, y: f64, spec: &OutcomeSpec) -> Result<OutcomeFit> {
    let keep = outcome_rows(data, rows, t);
    let above = |i: usize| data.get(i).marker_at(t).is_some_and(|m| m > y);
    let columns = spec.covariates.clone().unwrap_or_else(|| (0..data.dim()).collect());
    let cov = |i: usize| -> Vec<f64> { columns.iter().map(|&j| data.get(i).covariates[j]).collect() };
    let mut fit = OutcomeFit {
        link: spec.link,
        design: spec.design,
        columns: columns.clone(),
        y,
        parts: Vec::new(),
        cells: None,
    };
    match spec.design {
        OutcomeDesign::Cells => {
            fit.cells = Some(CellTable::fit(data, &keep, &columns, true, above));
        }
        OutcomeDesign::Intercept => {
            let resp: Vec<bool> = keep.iter().map(|&i| above(i)).collect();
            fit.parts
                .push(fit_part(&vec![vec![]; resp.len()], &resp, spec.link, "")?);
        }
        OutcomeDesign::MainEffects => {
            let x: Vec<Vec<f64>> = keep
                .iter()
                .map(|&i| std::iter::once(data.get(i).treatment as f64).chain(cov(i)).collect())
                .collect();
            let resp: Vec<bool> = keep.iter().map(|&i| above(i)).collect();
            fit.parts.push(fit_part(&x, &resp, spec.link, "")?);
        }
        OutcomeDesign::InterceptPerArm | OutcomeDesign::Interaction => {
            for a in 0..=1u8 {
                let arm: Vec<usize> = keep.iter().copied().filter(|&i| data.get(i).treatment == a).collect();
                let x: Vec<Vec<f64>> = if spec.design == OutcomeDesign::Interaction {
                    arm.iter().map(|&i| cov(i)).collect()
                } else {
                    vec![vec![]; arm.len()]
                };
                let resp: Vec<bool> = arm.iter().map(|&i| above(i)).collect();
                fit.parts.push(fit_part(&x, &resp, spec.link, &format!(" in arm {a}"))?);
            }
        }
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;

    fn survivors(markers: &[(u8, f64, f64)]) -> Dataset {
        let recs = markers
            .iter()
            .enumerate()
            .map(|(i, &(a, l, m))| {
                SubjectRecord::new(i.to_string(), 5.0, false, a)
                    .with_marker(m)
                    .with_covariates(vec![l])
            })
            .collect();
        Dataset::new(vec!["x".into()], recs).unwrap()
    }

    #[test]
    fn intercept_is_survivor_proportion() {
        let d = survivors(&[
            (0, 0.0, 1.0),
            (1, 0.0, 5.0),
            (0, 1.0, 6.0),
            (1, 1.0, 2.0),
            (0, 0.0, 9.0),
        ]);
        let fit = fit_outcome(
            &d,
            &d.all_rows(),
            2.0,
            4.0,
            &OutcomeSpec::new(OutcomeDesign::Intercept, Link::Probit),
        )
        .unwrap();
        assert!((fit.predict(0, &[0.0]) - 0.6).abs() < 1e-10);
    }

    #[test]
    fn constant_arm_degenerates() {
        let d = survivors(&[(0, 0.0, 1.0), (0, 1.0, 2.0), (1, 0.0, 5.0), (1, 1.0, 3.0)]);
        let spec = OutcomeSpec::new(OutcomeDesign::InterceptPerArm, Link::Logit);
        let fit = fit_outcome(&d, &d.all_rows(), 2.0, 4.0, &spec).unwrap();
        assert_eq!(fit.predict(0, &[0.0]), 0.0);
        assert!((fit.predict(1, &[0.0]) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn dead_subjects_are_excluded() {
        let mut recs: Vec<SubjectRecord> = (0..4)
            .map(|i| SubjectRecord::new(i.to_string(), 5.0, false, 0).with_marker(i as f64))
            .collect();
        recs.push(SubjectRecord::new("dead", 1.0, true, 0));
        let d = Dataset::new(vec![], recs).unwrap();
        let fit = fit_outcome(
            &d,
            &d.all_rows(),
            2.0,
            1.5,
            &OutcomeSpec::new(OutcomeDesign::Intercept, Link::Logit),
        )
        .unwrap();
        assert!((fit.predict(0, &[]) - 0.5).abs() < 1e-10);
    }
}
