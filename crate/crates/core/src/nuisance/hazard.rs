//! Stratified Cox models with Breslow ties and Breslow baseline hazards.
//!
//! With no covariates a stratum reduces to the Nelson–Aalen increments
//! `d/Y`, so the product-limit evaluation reproduces Kaplan–Meier exactly.
//! Within tied times deaths precede censorings: a subject censored at `s`
//! is at risk for a death at `s`, a subject dying at `s` is not at risk for
//! a censoring at `s`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::{MAX_HALVINGS, MAX_ITER, SCORE_TOL};
use crate::data::{Dataset, SubjectRecord};
use crate::error::{estimation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardTarget {
    Event,
    Censoring,
}

impl HazardTarget {
    /// Position of this process within tied times (deaths first).
    fn phase(self) -> u8 {
        match self {
            HazardTarget::Event => 0,
            HazardTarget::Censoring => 1,
        }
    }
}

fn phase_of(r: &SubjectRecord) -> u8 {
    if r.event {
        0
    } else {
        1
    }
}

/// How survival is evaluated from hazard increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurvivalForm {
    /// `Π (1 - dΛ)`; errors when an increment exceeds 1.
    ProductLimit,
    /// `exp(-Λ)`.
    Exponential,
    /// Product-limit, falling back to `exp(-Λ)` for a covariate value whose
    /// increments would exceed 1.
    #[default]
    Auto,
}

/// What to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSpec {
    pub target: HazardTarget,
    /// Covariate columns entering the linear predictor.
    pub covariates: Vec<usize>,
    pub stratify_by_treatment: bool,
    /// Further discrete covariates whose distinct values form strata.
    #[serde(default)]
    pub strata_covariates: Vec<usize>,
    #[serde(default)]
    pub form: SurvivalForm,
}

impl HazardSpec {
    pub fn kaplan_meier(target: HazardTarget) -> Self {
        Self {
            target,
            covariates: Vec::new(),
            stratify_by_treatment: true,
            strata_covariates: Vec::new(),
            form: SurvivalForm::Auto,
        }
    }

    pub fn cox(target: HazardTarget, covariates: Vec<usize>) -> Self {
        Self {
            covariates,
            ..Self::kaplan_meier(target)
        }
    }
}

/// One stratum's fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardStratum {
    pub arm: Option<u8>,
    pub cell: Vec<f64>,
    /// Original-scale coefficients, one per spec covariate.
    pub coefficients: Vec<f64>,
    /// Covariate centers the baseline refers to.
    pub centers: Vec<f64>,
    pub jump_times: Vec<f64>,
    /// Baseline increments `dΛ₀` at the centers.
    pub increments: Vec<f64>,
    pub iterations: usize,
    pub score_norm: f64,
    pub n: usize,
    pub n_events: usize,
    max_increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardFit {
    pub spec: HazardSpec,
    pub strata: Vec<HazardStratum>,
}

/// A hazard curve specialised to one covariate value.
#[derive(Debug, Clone, Copy)]
pub struct SubjectCurve<'a> {
    times: &'a [f64],
    increments: &'a [f64],
    risk: f64,
    exponential: bool,
}

impl<'a> SubjectCurve<'a> {
    pub fn times(&self) -> &'a [f64] {
        self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn uses_exponential_form(&self) -> bool {
        self.exponential
    }

    #[inline]
    pub fn hazard_increment(&self, k: usize) -> f64 {
        self.risk * self.increments[k]
    }

    /// Survival factor across jump `k`.
    #[inline]
    pub fn factor(&self, k: usize) -> f64 {
        let h = self.hazard_increment(k);
        if self.exponential {
            (-h).exp()
        } else {
            1.0 - h
        }
    }

    /// Number of jumps at times `<= r`.
    #[inline]
    pub fn count_upto(&self, r: f64) -> usize {
        self.times.partition_point(|&s| s <= r)
    }

    /// Number of jumps at times `< r`.
    #[inline]
    pub fn count_before(&self, r: f64) -> usize {
        self.times.partition_point(|&s| s < r)
    }

    fn product(&self, m: usize) -> f64 {
        (0..m).map(|k| self.factor(k)).product()
    }

    /// Right-continuous survival `S(r)`.
    pub fn survival(&self, r: f64) -> f64 {
        self.product(self.count_upto(r))
    }

    /// Left limit `S(r-)`.
    pub fn survival_left(&self, r: f64) -> f64 {
        self.product(self.count_before(r))
    }

    pub fn cumulative_hazard(&self, r: f64) -> f64 {
        (0..self.count_upto(r)).map(|k| self.hazard_increment(k)).sum()
    }
}

impl HazardFit {
    pub fn target(&self) -> HazardTarget {
        self.spec.target
    }

    fn stratum_for(&self, a: u8, l: &[f64]) -> Result<&HazardStratum> {
        self.strata
            .iter()
            .find(|s| {
                s.arm.is_none_or(|arm| arm == a)
                    && self
                        .spec
                        .strata_covariates
                        .iter()
                        .zip(&s.cell)
                        .all(|(&j, &v)| l[j] == v)
            })
            .ok_or_else(|| {
                estimation(format!(
                    "{:?} hazard: no fitted stratum for arm {a} and covariates {l:?}",
                    self.spec.target
                ))
            })
    }

    /// The curve for arm `a` and covariates `l`.
    pub fn curve(&self, a: u8, l: &[f64]) -> Result<SubjectCurve<'_>> {
        let s = self.stratum_for(a, l)?;
        let lin: f64 = self
            .spec
            .covariates
            .iter()
            .zip(s.coefficients.iter().zip(&s.centers))
            .map(|(&j, (b, c))| b * (l[j] - c))
            .sum();
        let risk = lin.exp();
        if !risk.is_finite() {
            return Err(estimation("hazard: non-finite risk score"));
        }
        let overshoot = risk * s.max_increment > 1.0;
        let exponential = match self.spec.form {
            SurvivalForm::Exponential => true,
            SurvivalForm::Auto => overshoot,
            SurvivalForm::ProductLimit if overshoot => {
                return Err(estimation(
                    "hazard increment exceeds 1 for this covariate value; \
                     use the exponential survival form",
                ))
            }
            SurvivalForm::ProductLimit => false,
        };
        Ok(SubjectCurve {
            times: &s.jump_times,
            increments: &s.increments,
            risk,
            exponential,
        })
    }
}

/// Survival `S(r | a, l)` (or `K` for a censoring fit), unfloored.
pub fn predict_survival(fit: &HazardFit, r: f64, a: u8, l: &[f64]) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(estimation(format!("survival evaluated at negative time {r}")));
    }
    Ok(fit.curve(a, l)?.survival(r))
}

/// Hazard increments `exp(b'l) dΛ₀(s)` for jumps `s <= upto`, in time order.
pub fn cumhaz_increments(fit: &HazardFit, a: u8, l: &[f64], upto: f64) -> Result<Vec<(f64, f64)>> {
    let c = fit.curve(a, l)?;
    Ok((0..c.count_upto(upto))
        .map(|k| (c.times[k], c.hazard_increment(k)))
        .collect())
}

/// Fits the hazard of `spec.target` on `rows` of `data`.
pub fn fit_hazard(data: &Dataset, rows: &[usize], spec: &HazardSpec) -> Result<HazardFit> {
    let mut groups: BTreeMap<(u8, Vec<u64>), Vec<usize>> = BTreeMap::new();
    for &i in rows {
        let r = data.get(i);
        let arm = if spec.stratify_by_treatment {
            r.treatment
        } else {
            u8::MAX
        };
        let cell = spec
            .strata_covariates
            .iter()
            .map(|&j| r.covariates[j].to_bits())
            .collect();
        groups.entry((arm, cell)).or_default().push(i);
    }
    if spec.stratify_by_treatment {
        for a in 0..=1u8 {
            if !groups.keys().any(|(arm, _)| *arm == a) {
                return Err(estimation(format!(
                    "{:?} hazard: treatment arm {a} has no subjects",
                    spec.target
                )));
            }
        }
    }
    let mut strata = Vec::with_capacity(groups.len());
    for ((arm, cell), members) in groups {
        let mut s = fit_stratum(data, &members, spec)?;
        s.arm = (arm != u8::MAX).then_some(arm);
        s.cell = cell.into_iter().map(f64::from_bits).collect();
        strata.push(s);
    }
    Ok(HazardFit {
        spec: spec.clone(),
        strata,
    })
}

/// Subjects sorted by descending (time, phase), with group boundaries for
/// equal keys. Members of one group share a time and a phase.
struct RiskOrder {
    order: Vec<usize>,
    group_ends: Vec<usize>,
}

fn risk_order(recs: &[&SubjectRecord]) -> RiskOrder {
    let mut order: Vec<usize> = (0..recs.len()).collect();
    order.sort_by(|&i, &j| {
        recs[j]
            .time
            .total_cmp(&recs[i].time)
            .then(phase_of(recs[j]).cmp(&phase_of(recs[i])))
    });
    let mut group_ends = Vec::new();
    for k in 1..=order.len() {
        if k == order.len() || {
            let (a, b) = (recs[order[k - 1]], recs[order[k]]);
            a.time != b.time || phase_of(a) != phase_of(b)
        } {
            group_ends.push(k);
        }
    }
    RiskOrder { order, group_ends }
}

struct PartialLik {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

fn partial_likelihood(
    z: &[Vec<f64>],
    target: &[bool],
    ro: &RiskOrder,
    beta: &DVector<f64>,
    with_derivatives: bool,
) -> PartialLik {
    let p = beta.len();
    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::<f64>::zeros(p);
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut start = 0;
    for &end in &ro.group_ends {
        for &k in &ro.order[start..end] {
            let zk = &z[k];
            let eta: f64 = (0..p).map(|j| beta[j] * zk[j]).sum();
            let w = eta.exp();
            s0 += w;
            if with_derivatives {
                for a in 0..p {
                    s1[a] += w * zk[a];
                    for b in 0..=a {
                        s2[(a, b)] += w * zk[a] * zk[b];
                    }
                }
            }
        }
        let first = ro.order[start];
        if target[first] {
            let d = (end - start) as f64;
            for &k in &ro.order[start..end] {
                let zk = &z[k];
                loglik += (0..p).map(|j| beta[j] * zk[j]).sum::<f64>();
                if with_derivatives {
                    for a in 0..p {
                        score[a] += zk[a];
                    }
                }
            }
            loglik -= d * s0.ln();
            if with_derivatives {
                for a in 0..p {
                    let ma = s1[a] / s0;
                    score[a] -= d * ma;
                    for b in 0..=a {
                        let v = s2[(a, b)] / s0 - ma * s1[b] / s0;
                        info[(a, b)] += d * v;
                    }
                }
            }
        }
        start = end;
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    PartialLik { loglik, score, info }
}

fn fit_stratum(data: &Dataset, members: &[usize], spec: &HazardSpec) -> Result<HazardStratum> {
    let n = members.len();
    let p_all = spec.covariates.len();
    let target_phase = spec.target.phase();

    // local indexing: position within `members`
    let local: Vec<&SubjectRecord> = members.iter().map(|&i| data.get(i)).collect();
    let is_target: Vec<bool> = local.iter().map(|r| phase_of(r) == target_phase).collect();
    let n_events = is_target.iter().filter(|&&b| b).count();

    // standardize; drop constant columns
    let mut keep = Vec::new();
    let mut means = vec![0.0; p_all];
    let mut sds = Vec::new();
    for (c, &j) in spec.covariates.iter().enumerate() {
        let mean = local.iter().map(|r| r.covariates[j]).sum::<f64>() / n as f64;
        let var = local.iter().map(|r| (r.covariates[j] - mean).powi(2)).sum::<f64>() / n as f64;
        means[c] = mean;
        let sd = var.sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            log::warn!("hazard: covariate {j} has zero variance in stratum; coefficient fixed at 0");
        } else {
            keep.push(c);
            sds.push(sd);
        }
    }
    let p = keep.len();
    let z: Vec<Vec<f64>> = local
        .iter()
        .map(|r| {
            keep.iter()
                .zip(&sds)
                .map(|(&c, sd)| (r.covariates[spec.covariates[c]] - means[c]) / sd)
                .collect()
        })
        .collect();

    let ro = risk_order(&local);

    let mut beta = DVector::<f64>::zeros(p);
    let mut iterations = 0;
    let mut score_norm = 0.0;
    if p > 0 && n_events > 0 {
        let mut cur = partial_likelihood(&z, &is_target, &ro, &beta, true);
        for it in 0..=MAX_ITER {
            score_norm = cur.score.amax();
            iterations = it;
            if score_norm <= SCORE_TOL {
                break;
            }
            if it == MAX_ITER {
                return Err(estimation(format!(
                    "{:?} Cox fit did not converge in {MAX_ITER} iterations (score norm {score_norm:.3e})",
                    spec.target
                )));
            }
            let step = cur
                .info
                .clone()
                .cholesky()
                .ok_or_else(|| {
                    estimation(format!(
                        "{:?} Cox fit: singular information (too few events for {p} covariates?)",
                        spec.target
                    ))
                })?
                .solve(&cur.score);
            let mut scale = 1.0;
            let mut next = None;
            for _ in 0..=MAX_HALVINGS {
                let cand = &beta + &step * scale;
                let lik = partial_likelihood(&z, &is_target, &ro, &cand, true);
                if lik.loglik.is_finite() && lik.loglik >= cur.loglik - 1e-12 * cur.loglik.abs().max(1.0) {
                    next = Some((cand, lik));
                    break;
                }
                scale *= 0.5;
            }
            let tiny = step.amax() * scale < 1e-13;
            match next {
                Some((b, lik)) if !tiny => {
                    beta = b;
                    cur = lik;
                }
                Some((b, lik)) => {
                    beta = b;
                    cur = lik;
                    score_norm = cur.score.amax();
                    if score_norm <= 1e-6 {
                        break;
                    }
                    return Err(estimation(format!(
                        "{:?} Cox fit stalled with score norm {score_norm:.3e}",
                        spec.target
                    )));
                }
                None => {
                    if score_norm <= 1e-6 {
                        break;
                    }
                    return Err(estimation(format!(
                        "{:?} Cox fit: step halving failed (score norm {score_norm:.3e})",
                        spec.target
                    )));
                }
            }
            if beta.iter().any(|b| b.abs() > super::glm::SEPARATION_BOUND) {
                return Err(estimation(format!(
                    "{:?} Cox fit: coefficients diverging (monotone likelihood)",
                    spec.target
                )));
            }
        }
    }

    // Breslow baseline, ascending in time
    let mut jump_times = Vec::new();
    let mut increments = Vec::new();
    let mut s0 = 0.0;
    let mut start = 0;
    for &end in &ro.group_ends {
        for &k in &ro.order[start..end] {
            let eta: f64 = (0..p).map(|j| beta[j] * z[k][j]).sum();
            s0 += eta.exp();
        }
        let first = ro.order[start];
        if is_target[first] {
            jump_times.push(local[first].time);
            increments.push((end - start) as f64 / s0);
        }
        start = end;
    }
    jump_times.reverse();
    increments.reverse();

    let mut coefficients = vec![0.0; p_all];
    for (c_kept, &c) in keep.iter().enumerate() {
        coefficients[c] = beta[c_kept] / sds[c_kept];
    }
    let max_increment = increments.iter().copied().fold(0.0, f64::max);
    Ok(HazardStratum {
        arm: None,
        cell: Vec::new(),
        coefficients,
        centers: means,
        jump_times,
        increments,
        iterations,
        score_norm,
        n,
        n_events,
        max_increment,
    })
}

/// Log partial likelihood of one stratum at original-scale coefficients.
/// Used to cross-check fits against generic optimizers.
pub fn log_partial_likelihood(
    data: &Dataset,
    rows: &[usize],
    target: HazardTarget,
    covariates: &[usize],
    coefficients: &[f64],
) -> f64 {
    let recs: Vec<&SubjectRecord> = rows.iter().map(|&i| data.get(i)).collect();
    let ro = risk_order(&recs);
    let z: Vec<Vec<f64>> = recs
        .iter()
        .map(|r| covariates.iter().map(|&j| r.covariates[j]).collect())
        .collect();
    let is_target: Vec<bool> = recs.iter().map(|r| phase_of(r) == target.phase()).collect();
    let beta = DVector::from_column_slice(coefficients);
    partial_likelihood(&z, &is_target, &ro, &beta, false).loglik
}
