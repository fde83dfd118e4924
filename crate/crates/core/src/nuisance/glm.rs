//! Binary regression by iteratively reweighted least squares.
//!
//! Columns are standardized internally; convergence is judged on the score
//! of the standardized problem and coefficients are reported on the
//! original scale.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{estimation, Result};
use crate::numeric::{expit, norm_cdf, norm_pdf, norm_sf};

pub(crate) const SCORE_TOL: f64 = 1e-9;
pub(crate) const MAX_ITER: usize = 100;
pub(crate) const MAX_HALVINGS: usize = 20;
/// Standardized coefficients beyond this are treated as separation.
pub(crate) const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => expit(eta),
            Link::Probit => norm_cdf(eta),
        }
    }

    /// (log p, log(1 - p)) without cancellation in the tails.
    fn log_probs(self, eta: f64) -> (f64, f64) {
        match self {
            Link::Logit => {
                // log expit(x) = -log(1 + e^{-x})
                let lp = -softplus(-eta);
                let lq = -softplus(eta);
                (lp, lq)
            }
            Link::Probit => (norm_cdf(eta).ln(), norm_sf(eta).ln()),
        }
    }

    /// Score contribution multiplier and IRLS weight at `eta`.
    fn score_and_weight(self, eta: f64, y: f64) -> (f64, f64) {
        match self {
            Link::Logit => {
                let p = expit(eta);
                (y - p, p * (1.0 - p))
            }
            Link::Probit => {
                let eta = eta.clamp(-35.0, 35.0);
                let p = norm_cdf(eta);
                let q = norm_sf(eta);
                let d = norm_pdf(eta);
                let pq = (p * q).max(f64::MIN_POSITIVE);
                ((y - p) * d / pq, d * d / pq)
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// A fitted binary regression with intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryGlm {
    pub link: Link,
    /// `[intercept, b_1, ..., b_p]` on the original covariate scale.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the standardized score at the returned coefficients.
    pub score_norm: f64,
    /// Features dropped for zero variance (coefficient fixed at 0).
    pub dropped: Vec<usize>,
}

impl BinaryGlm {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len() + 1, self.coefficients.len());
        self.coefficients[0] + x.iter().zip(&self.coefficients[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.link.inverse(self.linear_predictor(x))
    }
}

/// Maximum-likelihood fit of `P(y = 1 | x)` with an intercept.
///
/// `x` holds one feature row per observation (no intercept column).
pub fn fit_binary(x: &[Vec<f64>], y: &[bool], link: Link) -> Result<BinaryGlm> {
    let n = y.len();
    if n == 0 {
        return Err(estimation("binary regression on an empty sample"));
    }
    let p = x.first().map_or(0, Vec::len);
    let n_pos = y.iter().filter(|&&v| v).count();
    if n_pos == 0 || n_pos == n {
        return Err(estimation("binary regression needs both response classes"));
    }

    // standardize, dropping constant columns
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for j in 0..p {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            log::warn!("binary regression: feature {j} has zero variance; coefficient fixed at 0");
            dropped.push(j);
        } else {
            keep.push(j);
            means.push(mean);
            sds.push(sd);
        }
    }
    let k = keep.len() + 1;
    let z = DMatrix::from_fn(n, k, |i, c| {
        if c == 0 {
            1.0
        } else {
            (x[i][keep[c - 1]] - means[c - 1]) / sds[c - 1]
        }
    });
    let yv: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();

    let loglik = |beta: &DVector<f64>| -> f64 {
        let eta = &z * beta;
        eta.iter()
            .zip(&yv)
            .map(|(&e, &yi)| {
                let (lp, lq) = link.log_probs(e);
                yi * lp + (1.0 - yi) * lq
            })
            .sum()
    };

    let mut beta = DVector::zeros(k);
    let pbar = n_pos as f64 / n as f64;
    beta[0] = match link {
        Link::Logit => (pbar / (1.0 - pbar)).ln(),
        Link::Probit => crate::numeric::norm_quantile(pbar),
    };
    let mut ll = loglik(&beta);
    let mut iterations = 0;
    let mut score_norm = f64::INFINITY;

    for it in 0..=MAX_ITER {
        let eta = &z * &beta;
        let mut score = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..n {
            let (s, w) = link.score_and_weight(eta[i], yv[i]);
            let row = z.row(i);
            for a in 0..k {
                score[a] += s * row[a];
                for b in 0..=a {
                    info[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        score_norm = score.amax();
        iterations = it;
        if score_norm <= SCORE_TOL {
            break;
        }
        if it == MAX_ITER {
            return Err(estimation(format!(
                "binary regression did not converge in {MAX_ITER} iterations (score norm {score_norm:.3e})"
            )));
        }
        let step = info
            .cholesky()
            .ok_or_else(|| estimation("binary regression: singular information matrix (collinear design?)"))?
            .solve(&score);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta + &step * scale;
            let cand_ll = loglik(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || step.amax() * scale < 1e-13 {
            // floating-point floor: accept if the score is already tiny
            if score_norm <= 1e-6 {
                break;
            }
            return Err(estimation(format!(
                "binary regression stalled with score norm {score_norm:.3e}"
            )));
        }
        if beta.iter().skip(1).any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(estimation(
                "binary regression: coefficients diverging (perfect separation); \
                 simplify the design, use a known probability, or raise the positivity floor",
            ));
        }
    }

    // back to the original scale
    let mut coefficients = vec![0.0; p + 1];
    let mut intercept = beta[0];
    for (c, &j) in keep.iter().enumerate() {
        let b = beta[c + 1] / sds[c];
        coefficients[j + 1] = b;
        intercept -= b * means[c];
    }
    coefficients[0] = intercept;
    Ok(BinaryGlm {
        link,
        coefficients,
        iterations,
        score_norm,
        dropped,
    })
}
