use serde::{Deserialize, Serialize};

use super::glm::{fit_binary, BinaryGlm, Link};
use crate::data::Dataset;
use crate::error::{estimation, Result};

/// Logistic model for `p(A, L) = P(R = 1 | A, L, T* > t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub include_treatment: bool,
    /// Covariate columns; `None` means all.
    #[serde(default)]
    pub covariates: Option<Vec<usize>>,
}

impl Default for MissingnessSpec {
    fn default() -> Self {
        Self {
            include_treatment: true,
            covariates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessFit {
    pub link: Link,
    pub include_treatment: bool,
    pub columns: Vec<usize>,
    /// `None` when every survivor had an observed marker (`p = 1`).
    pub glm: Option<BinaryGlm>,
}

impl MissingnessFit {
    pub fn coefficients(&self) -> Option<&[f64]> {
        self.glm.as_ref().map(|g| g.coefficients.as_slice())
    }

    /// Unfloored `p(a, l)`.
    pub fn predict_raw(&self, a: u8, l: &[f64]) -> f64 {
        match &self.glm {
            None => 1.0,
            Some(g) => {
                let x: Vec<f64> = self
                    .include_treatment
                    .then_some(a as f64)
                    .into_iter()
                    .chain(self.columns.iter().map(|&j| l[j]))
                    .collect();
                g.predict(&x)
            }
        }
    }

    /// `p(a, l)` floored for use as a denominator.
    pub fn predict(&self, a: u8, l: &[f64], floor: f64) -> f64 {
        self.predict_raw(a, l).clamp(floor, 1.0)
    }
}

pub fn fit_missingness(data: &Dataset, rows: &[usize], t: f64, spec: &MissingnessSpec) -> Result<MissingnessFit> {
    let alive: Vec<usize> = rows.iter().copied().filter(|&i| data.get(i).alive_at(t)).collect();
    let columns = spec.covariates.clone().unwrap_or_else(|| (0..data.dim()).collect());
    let r: Vec<bool> = alive.iter().map(|&i| data.get(i).r()).collect();
    let observed = r.iter().filter(|&&b| b).count();
    let mut fit = MissingnessFit {
        link: Link::Logit,
        include_treatment: spec.include_treatment,
        columns,
        glm: None,
    };
    if observed == r.len() {
        log::info!("missingness: every survivor has an observed marker; p = 1");
        return Ok(fit);
    }
    if observed == 0 {
        return Err(estimation("missingness: no survivor has an observed marker"));
    }
    let x: Vec<Vec<f64>> = alive
        .iter()
        .map(|&i| {
            let rec = data.get(i);
            spec.include_treatment
                .then_some(rec.treatment as f64)
                .into_iter()
                .chain(fit.columns.iter().map(|&j| rec.covariates[j]))
                .collect()
        })
        .collect();
    fit.glm = Some(fit_binary(&x, &r, Link::Logit).map_err(|e| estimation(format!("missingness: {e}")))?);
    Ok(fit)
}
