use serde::{Deserialize, Serialize};

use super::cells::CellTable;
use super::glm::{fit_binary, BinaryGlm, Link};
use crate::data::Dataset;
use crate::error::{estimation, Result};

/// A candidate model for `π(L) = P(A = 1 | L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum PropensitySpec {
    /// Known randomization probability.
    Known(f64),
    InterceptOnly,
    /// Logistic on every covariate.
    MainEffects,
    /// Logistic on the listed covariate columns.
    Covariates(Vec<usize>),
    /// Empirical treated fraction within each cell of the listed discrete
    /// covariates.
    Cells(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityKind {
    KnownConstant,
    Logistic,
    Cells,
    CvSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum PropensityModel {
    Fixed(f64),
    Logistic { columns: Vec<usize>, glm: BinaryGlm },
    Cells(CellTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityFit {
    pub kind: PropensityKind,
    model: PropensityModel,
}

impl PropensityFit {
    pub fn fixed_prob(&self) -> Option<f64> {
        match self.model {
            PropensityModel::Fixed(p) => Some(p),
            _ => None,
        }
    }

    /// Original-scale logistic coefficients `[intercept, b...]`, if any.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match &self.model {
            PropensityModel::Logistic { glm, .. } => Some(&glm.coefficients),
            _ => None,
        }
    }

    pub(crate) fn mark_selected(mut self) -> Self {
        self.kind = PropensityKind::CvSelected;
        self
    }

    /// Unclipped `P(A = 1 | L = l)`.
    pub fn predict_raw(&self, l: &[f64]) -> f64 {
        match &self.model {
            PropensityModel::Fixed(p) => *p,
            PropensityModel::Logistic { columns, glm } => {
                let x: Vec<f64> = columns.iter().map(|&j| l[j]).collect();
                glm.predict(&x)
            }
            PropensityModel::Cells(t) => t.lookup(None, l).unwrap_or(f64::NAN),
        }
    }

    /// `P(A = 1 | l)` clipped to `[floor, 1 - floor]`.
    pub fn predict(&self, l: &[f64], floor: f64) -> f64 {
        self.predict_raw(l).clamp(floor, 1.0 - floor)
    }

    /// Clipped `P(A = a | l)`.
    pub fn arm_prob(&self, a: u8, l: &[f64], floor: f64) -> f64 {
        let p = self.predict(l, floor);
        if a == 1 {
            p
        } else {
            1.0 - p
        }
    }
}

pub fn fit_propensity(data: &Dataset, rows: &[usize], spec: &PropensitySpec) -> Result<PropensityFit> {
    if let PropensitySpec::Known(p) = *spec {
        if !(p > 0.0 && p < 1.0) {
            return Err(estimation(format!("known randomization probability {p} not in (0,1)")));
        }
        return Ok(PropensityFit {
            kind: PropensityKind::KnownConstant,
            model: PropensityModel::Fixed(p),
        });
    }
    let a: Vec<bool> = rows.iter().map(|&i| data.get(i).treatment == 1).collect();
    let n1 = a.iter().filter(|&&v| v).count();
    if n1 == 0 || n1 == a.len() {
        return Err(estimation(
            "propensity: only one treatment arm present; a known probability is required",
        ));
    }
    let columns = match spec {
        PropensitySpec::Known(_) => unreachable!(),
        PropensitySpec::InterceptOnly => Vec::new(),
        PropensitySpec::MainEffects => (0..data.dim()).collect(),
        PropensitySpec::Covariates(c) => c.clone(),
        PropensitySpec::Cells(c) => {
            let table = CellTable::fit(data, rows, c, false, |i| data.get(i).treatment == 1);
            return Ok(PropensityFit {
                kind: PropensityKind::Cells,
                model: PropensityModel::Cells(table),
            });
        }
    };
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| columns.iter().map(|&j| data.get(i).covariates[j]).collect())
        .collect();
    let glm = fit_binary(&x, &a, Link::Logit).map_err(|e| estimation(format!("propensity: {e}")))?;
    Ok(PropensityFit {
        kind: PropensityKind::Logistic,
        model: PropensityModel::Logistic { columns, glm },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;

    fn data(n: usize, treated: usize) -> Dataset {
        let recs = (0..n)
            .map(|i| {
                SubjectRecord::new(i.to_string(), 1.0, true, (i < treated) as u8).with_covariates(vec![(i % 3) as f64])
            })
            .collect();
        Dataset::new(vec!["x".into()], recs).unwrap()
    }

    #[test]
    fn intercept_only_is_arm_share() {
        let d = data(100, 40);
        let fit = fit_propensity(&d, &d.all_rows(), &PropensitySpec::InterceptOnly).unwrap();
        assert!((fit.predict(&[2.0], 0.01) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn known_ignores_data() {
        let d = data(10, 9);
        let fit = fit_propensity(&d, &d.all_rows(), &PropensitySpec::Known(0.5)).unwrap();
        assert_eq!(fit.predict(&[0.0], 0.01), 0.5);
        assert_eq!(fit.arm_prob(0, &[1.0], 0.01), 0.5);
    }

    #[test]
    fn single_arm_is_an_error() {
        let d = data(10, 10);
        assert!(fit_propensity(&d, &d.all_rows(), &PropensitySpec::InterceptOnly).is_err());
    }

    #[test]
    fn predictions_are_clipped() {
        let d = data(200, 199);
        let fit = fit_propensity(&d, &d.all_rows(), &PropensitySpec::InterceptOnly).unwrap();
        assert_eq!(fit.predict(&[0.0], 0.05), 0.95);
    }
}
