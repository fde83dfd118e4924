//! Plug-in, one-step, unadjusted and efficient-survival estimators.
//!
//! Every one-step estimate is returned as an [`EifSample`]: the point
//! estimate with one estimated influence value per subject.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{check_markers_available, Dataset, MissingnessMode, SubjectRecord};
use crate::error::{estimation, validation, Result};
use crate::nuisance::{fit_hazard, HazardSpec, HazardTarget, NuisanceBundle, SubjectCurve};
use crate::numeric::{stable_mean, stable_sum, z_crit};

/// A point estimate and its per-subject estimated influence values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifSample {
    pub label: String,
    pub point: f64,
    pub influence: Vec<f64>,
    pub n: usize,
    /// Denominators raised to the positivity floor while computing this.
    #[serde(default)]
    pub floored: usize,
}

impl EifSample {
    pub fn new(label: impl Into<String>, point: f64, influence: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if !point.is_finite() || influence.iter().any(|v| !v.is_finite()) {
            return Err(estimation(format!("{label}: non-finite estimate or influence value")));
        }
        Ok(Self {
            n: influence.len(),
            label,
            point,
            influence,
            floored: 0,
        })
    }

    /// Point = mean of per-subject contributions; influence = contribution
    /// minus the point.
    pub(crate) fn from_contributions(label: String, psi: Vec<f64>, floored: usize) -> Result<Self> {
        if psi.is_empty() {
            return Err(estimation(format!("{label}: empty sample")));
        }
        let point = stable_mean(&psi);
        let influence = psi.iter().map(|p| p - point).collect();
        let mut e = Self::new(label, point, influence)?;
        e.floored = floored;
        Ok(e)
    }

    pub fn influence_mean(&self) -> f64 {
        stable_mean(&self.influence)
    }

    /// `a * self + b * other`, pointwise in subjects.
    pub fn combine(&self, a: f64, other: &EifSample, b: f64, label: impl Into<String>) -> Result<EifSample> {
        if self.n != other.n {
            return Err(validation(format!(
                "cannot combine influence samples of sizes {} and {}",
                self.n, other.n
            )));
        }
        let influence = self
            .influence
            .iter()
            .zip(&other.influence)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let mut e = EifSample::new(label, a * self.point + b * other.point, influence)?;
        e.floored = self.floored + other.floored;
        Ok(e)
    }
}

/// Estimate, standard error and confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

impl EstimateReport {
    pub fn wald(estimate: f64, std_error: f64, level: f64) -> Self {
        let half = z_crit(level) * std_error;
        Self {
            estimate,
            std_error,
            ci_low: estimate - half,
            ci_high: estimate + half,
            level,
        }
    }
}

pub fn eta_label(a: u8, t: f64, y: f64) -> String {
    format!("eta[a={a},y={y},t={t}]")
}

pub fn surv_label(a: u8, u: f64) -> String {
    format!("S[a={a},u={u}]")
}

/// Floors `v` and counts the event.
#[inline]
fn floored(v: f64, floor: f64, count: &mut usize) -> f64 {
    if v < floor {
        *count += 1;
        floor
    } else {
        v
    }
}

/// `∫₀ᵗ dM_C / H` for one subject, with `H(s) = S(s) K(s-)`, evaluated
/// under the subject's own treatment and covariates.
pub(crate) fn censoring_integral(
    ev: &SubjectCurve<'_>,
    ce: &SubjectCurve<'_>,
    rec: &SubjectRecord,
    t: f64,
    floor: f64,
    count: &mut usize,
) -> f64 {
    let upper = t.min(rec.time);
    let ev_times = ev.times();
    let ce_times = ce.times();
    let mut s = 1.0;
    let mut ke = 0;
    let mut k_left = 1.0;
    let mut comp = Vec::new();
    for (j, &sj) in ce_times.iter().enumerate() {
        if sj > upper {
            break;
        }
        // a subject dying at s is not at risk for censoring at s
        if sj == rec.time && rec.event {
            break;
        }
        while ke < ev_times.len() && ev_times[ke] <= sj {
            s *= ev.factor(ke);
            ke += 1;
        }
        let h = floored(s * k_left, floor, count);
        comp.push(ce.hazard_increment(j) / h);
        k_left *= ce.factor(j);
    }
    let jump = if !rec.event && rec.time <= t {
        let h = ev.survival(rec.time) * ce.survival_left(rec.time);
        1.0 / floored(h, floor, count)
    } else {
        0.0
    };
    jump - stable_sum(&comp)
}

/// `∫₀ᵘ dM / (S(r) K(r-))` for the event martingale of one subject.
pub(crate) fn event_integral(
    ev: &SubjectCurve<'_>,
    ce: &SubjectCurve<'_>,
    rec: &SubjectRecord,
    u: f64,
    floor: f64,
    count: &mut usize,
) -> f64 {
    let upper = u.min(rec.time);
    let ev_times = ev.times();
    let ce_times = ce.times();
    let mut s = 1.0;
    let mut kc = 0;
    let mut k_left = 1.0;
    let mut comp = Vec::new();
    for (j, &rj) in ev_times.iter().enumerate() {
        if rj > upper {
            break;
        }
        while kc < ce_times.len() && ce_times[kc] < rj {
            k_left *= ce.factor(kc);
            kc += 1;
        }
        s *= ev.factor(j);
        let h = floored(s * k_left, floor, count);
        comp.push(ev.hazard_increment(j) / h);
    }
    let jump = if rec.event && rec.time <= u {
        let h = ev.survival(rec.time) * ce.survival_left(rec.time);
        1.0 / floored(h, floor, count)
    } else {
        0.0
    };
    jump - stable_sum(&comp)
}

/// Public form of the censoring-martingale integral for one subject.
pub fn censoring_mart_integral(bundle: &NuisanceBundle, rec: &SubjectRecord, t: f64) -> Result<f64> {
    let ev = bundle.event.curve(rec.treatment, &rec.covariates)?;
    let ce = bundle.censoring.curve(rec.treatment, &rec.covariates)?;
    let mut count = 0;
    Ok(censoring_integral(&ev, &ce, rec, t, bundle.floor, &mut count))
}

fn check_t(bundle: &NuisanceBundle, t: f64) -> Result<()> {
    if bundle.t != t {
        return Err(estimation(format!(
            "nuisance bundle was fit for landmark t = {}, requested t = {t}",
            bundle.t
        )));
    }
    Ok(())
}

/// One subject's plug-in value `Q(a, L)` and debiasing term.
pub(crate) fn eta_contribution(
    bundle: &NuisanceBundle,
    rec: &SubjectRecord,
    a: u8,
    t: f64,
    y: f64,
    mar: bool,
    count: &mut usize,
) -> Result<(f64, f64)> {
    let l = &rec.covariates;
    let g = bundle.outcome_at(y)?.predict(a, l);
    let ev = bundle.event.curve(a, l)?;
    let q = g * ev.survival(t);
    if rec.treatment != a {
        return Ok((q, 0.0));
    }
    let ce = bundle.censoring.curve(a, l)?;
    let pi = bundle.arm_prob(a, l);
    let alive = rec.alive_at(t);
    let weight = if mar && alive {
        let m = bundle
            .missingness
            .as_ref()
            .ok_or_else(|| estimation("missing-at-random analysis without a missingness model"))?;
        if rec.r() {
            1.0 / floored(m.predict_raw(a, l), bundle.floor, count)
        } else {
            0.0
        }
    } else {
        1.0
    };
    if weight == 0.0 {
        return Ok((q, 0.0));
    }
    let observed = match rec.marker_at(t) {
        Some(m) if m > y => 1.0 / floored(ce.survival_left(t), bundle.floor, count),
        Some(_) => 0.0,
        None if alive => {
            return Err(validation(format!(
                "subject {:?} is alive at t = {t} without a marker",
                rec.id
            )))
        }
        None => 0.0,
    };
    let integral = censoring_integral(&ev, &ce, rec, t, bundle.floor, count);
    let brace = observed - q * (1.0 - integral);
    Ok((q, weight * brace / pi))
}

/// One subject's contribution to the efficient survival estimator.
pub(crate) fn surv_contribution(
    bundle: &NuisanceBundle,
    rec: &SubjectRecord,
    a: u8,
    u: f64,
    count: &mut usize,
) -> Result<f64> {
    let l = &rec.covariates;
    let ev = bundle.event.curve(a, l)?;
    let s_u = ev.survival(u);
    if rec.treatment != a {
        return Ok(s_u);
    }
    let ce = bundle.censoring.curve(a, l)?;
    let pi = bundle.arm_prob(a, l);
    let integral = event_integral(&ev, &ce, rec, u, bundle.floor, count);
    Ok(s_u * (1.0 - integral / pi))
}

fn mode(mar: bool) -> MissingnessMode {
    if mar {
        MissingnessMode::Mar
    } else {
        MissingnessMode::None
    }
}

/// `P_n Q_y(a, L)` over all subjects.
pub fn plugin_eta(bundle: &NuisanceBundle, data: &Dataset, a: u8, t: f64, y: f64) -> Result<f64> {
    check_t(bundle, t)?;
    let v = data
        .records()
        .iter()
        .map(|r| bundle.q(a, &r.covariates, y))
        .collect::<Result<Vec<f64>>>()?;
    Ok(stable_mean(&v))
}

/// Per-subject one-step contributions over `rows`.
pub(crate) fn eta_contributions(
    bundle: &NuisanceBundle,
    data: &Dataset,
    rows: &[usize],
    a: u8,
    t: f64,
    y: f64,
    mar: bool,
) -> Result<(Vec<f64>, usize)> {
    check_t(bundle, t)?;
    let mut count = 0;
    let psi = rows
        .iter()
        .map(|&i| {
            let (q, d) = eta_contribution(bundle, data.get(i), a, t, y, mar, &mut count)?;
            Ok(q + d)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((psi, count))
}

pub(crate) fn surv_contributions(
    bundle: &NuisanceBundle,
    data: &Dataset,
    rows: &[usize],
    a: u8,
    u: f64,
) -> Result<(Vec<f64>, usize)> {
    let mut count = 0;
    let psi = rows
        .iter()
        .map(|&i| surv_contribution(bundle, data.get(i), a, u, &mut count))
        .collect::<Result<Vec<f64>>>()?;
    Ok((psi, count))
}

/// One-step estimate of `η_a(y) = P(T > t, Y > y | do(A = a))`.
pub fn onestep_eta(bundle: &NuisanceBundle, data: &Dataset, a: u8, t: f64, y: f64, mar: bool) -> Result<EifSample> {
    check_markers_available(data, t, mode(mar))?;
    let (psi, count) = eta_contributions(bundle, data, &data.all_rows(), a, t, y, mar)?;
    EifSample::from_contributions(eta_label(a, t, y), psi, count)
}

/// Efficient estimate of `S_a(u) = P(T > u | do(A = a))`.
pub fn onestep_surv(bundle: &NuisanceBundle, data: &Dataset, a: u8, u: f64) -> Result<EifSample> {
    if !(u >= 0.0) {
        return Err(validation(format!("survival time u must be >= 0, got {u}")));
    }
    let (psi, count) = surv_contributions(bundle, data, &data.all_rows(), a, u)?;
    EifSample::from_contributions(surv_label(a, u), psi, count)
}

/// Arm-wise IPCW fraction `P_n I(A=a, T*>t, Y>y) / (K(t|a) π_a)`.
pub fn unadjusted_eta_point(data: &Dataset, rows: &[usize], a: u8, t: f64, y: f64) -> Result<f64> {
    let arm: Vec<usize> = rows.iter().copied().filter(|&i| data.get(i).treatment == a).collect();
    if arm.is_empty() {
        return Err(estimation(format!("arm {a} has no subjects")));
    }
    let spec = HazardSpec {
        stratify_by_treatment: false,
        ..HazardSpec::kaplan_meier(HazardTarget::Censoring)
    };
    let k = fit_hazard(data, &arm, &spec)?.curve(a, &[])?.survival(t);
    if k <= 0.0 {
        return Err(estimation(format!(
            "no arm-{a} subject is under observation at t = {t}"
        )));
    }
    let hits = arm
        .iter()
        .filter(|&&i| data.get(i).marker_at(t).is_some_and(|m| m > y))
        .count();
    Ok(hits as f64 / (arm.len() as f64 * k))
}

/// Unadjusted estimate with a seeded nonparametric bootstrap SE.
pub fn unadjusted_eta(
    data: &Dataset,
    a: u8,
    t: f64,
    y: f64,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<EstimateReport> {
    check_markers_available(data, t, MissingnessMode::None)?;
    let n = data.len();
    let point = unadjusted_eta_point(data, &data.all_rows(), a, t, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps = Vec::with_capacity(resamples);
    let mut rows = vec![0usize; n];
    let mut failed = 0;
    for _ in 0..resamples {
        for r in rows.iter_mut() {
            *r = rng.random_range(0..n);
        }
        match unadjusted_eta_point(data, &rows, a, t, y) {
            Ok(v) => reps.push(v),
            Err(_) => failed += 1,
        }
    }
    if failed > 0 {
        log::warn!("unadjusted bootstrap: {failed} of {resamples} resamples had no usable arm-{a} data");
    }
    let se = if reps.len() >= 2 {
        let m = stable_mean(&reps);
        let ss: Vec<f64> = reps.iter().map(|v| (v - m).powi(2)).collect();
        (stable_sum(&ss) / (reps.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(EstimateReport::wald(point, se, level))
}

/// Arm-`a` Kaplan–Meier at `u` and its Greenwood standard error.
pub fn kaplan_meier_greenwood(data: &Dataset, rows: &[usize], a: u8, u: f64) -> Result<(f64, f64)> {
    let mut arm: Vec<(f64, bool)> = rows
        .iter()
        .map(|&i| data.get(i))
        .filter(|r| r.treatment == a)
        .map(|r| (r.time, r.event))
        .collect();
    if arm.is_empty() {
        return Err(estimation(format!("arm {a} has no subjects")));
    }
    arm.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut at_risk = arm.len();
    let mut s = 1.0;
    let mut gw = 0.0;
    let mut k = 0;
    while k < arm.len() && arm[k].0 <= u {
        let time = arm[k].0;
        let mut d = 0;
        let mut m = 0;
        while k < arm.len() && arm[k].0 == time {
            d += arm[k].1 as usize;
            m += 1;
            k += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            if at_risk > d {
                gw += d as f64 / (at_risk as f64 * (at_risk - d) as f64);
            }
        }
        at_risk -= m;
    }
    Ok((s, s * gw.sqrt()))
}

pub fn unadjusted_surv(data: &Dataset, a: u8, u: f64, level: f64) -> Result<EstimateReport> {
    let (s, se) = kaplan_meier_greenwood(data, &data.all_rows(), a, u)?;
    Ok(EstimateReport::wald(s, se, level))
}

/// `e1 - e0` for estimates on the same subjects.
pub fn contrast(e1: &EifSample, e0: &EifSample) -> Result<EifSample> {
    e1.combine(1.0, e0, -1.0, format!("{} - {}", e1.label, e0.label))
}

/// How the `η`-contrast is integrated over the threshold grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiRule {
    Trapezoid,
    /// Left-endpoint step function; the last cell ends at `upper`.
    Step {
        upper: f64,
    },
}

/// Integrates per-threshold contrasts into `ψ = ∫ {η₁(y) − η₀(y)} dy`.
pub fn integrate_contrasts(grid: &[f64], contrasts: &[EifSample], rule: PsiRule) -> Result<EifSample> {
    if grid.len() != contrasts.len() {
        return Err(validation("threshold grid and contrasts differ in length"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(validation("threshold grid must be strictly increasing"));
    }
    let mut weights = vec![0.0; grid.len()];
    match rule {
        PsiRule::Trapezoid => {
            if grid.len() < 2 {
                return Err(validation("trapezoid integration needs at least two thresholds"));
            }
            for k in 0..grid.len() - 1 {
                let h = 0.5 * (grid[k + 1] - grid[k]);
                weights[k] += h;
                weights[k + 1] += h;
            }
        }
        PsiRule::Step { upper } => {
            if grid.is_empty() || upper <= grid[grid.len() - 1] {
                return Err(validation("step integration needs a grid below its upper bound"));
            }
            for k in 0..grid.len() {
                let next = grid.get(k + 1).copied().unwrap_or(upper);
                weights[k] = next - grid[k];
            }
        }
    }
    let n = contrasts[0].n;
    if contrasts.iter().any(|c| c.n != n) {
        return Err(validation("contrasts computed on different samples"));
    }
    let point = stable_sum(
        &contrasts
            .iter()
            .zip(&weights)
            .map(|(c, w)| w * c.point)
            .collect::<Vec<_>>(),
    );
    let influence = (0..n)
        .map(|i| {
            let v: Vec<f64> = contrasts
                .iter()
                .zip(&weights)
                .map(|(c, w)| w * c.influence[i])
                .collect();
            stable_sum(&v)
        })
        .collect();
    let mut e = EifSample::new("psi", point, influence)?;
    e.floored = contrasts.iter().map(|c| c.floored).sum();
    Ok(e)
}

/// `ψ` from one-step contrasts evaluated at each grid threshold.
pub fn mean_psi(
    grid: &[f64],
    rule: PsiRule,
    mut contrast_at: impl FnMut(f64) -> Result<EifSample>,
) -> Result<EifSample> {
    let contrasts = grid.iter().map(|&y| contrast_at(y)).collect::<Result<Vec<_>>>()?;
    integrate_contrasts(grid, &contrasts, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{fit_bundle, BundleOptions, LearnerLibrary};

    fn rec(id: usize, time: f64, event: bool, a: u8, marker: Option<f64>) -> SubjectRecord {
        let r = SubjectRecord::new(id.to_string(), time, event, a);
        match marker {
            Some(m) => r.with_marker(m),
            None => r,
        }
    }

    #[test]
    fn unadjusted_four_subjects() {
        let d = Dataset::new(
            vec![],
            vec![
                rec(0, 3.0, false, 1, Some(50.0)),
                rec(1, 1.0, true, 1, None),
                rec(2, 3.0, false, 0, Some(40.0)),
                rec(3, 0.5, true, 0, None),
            ],
        )
        .unwrap();
        assert_eq!(unadjusted_eta_point(&d, &d.all_rows(), 1, 2.0, 45.0).unwrap(), 0.5);
    }

    #[test]
    fn km_hand_value() {
        let d = Dataset::new(vec![], (1..=3).map(|i| rec(i, i as f64, true, 0, None)).collect()).unwrap();
        let (s, _) = kaplan_meier_greenwood(&d, &d.all_rows(), 0, 2.5).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn contrast_with_itself_is_zero() {
        let e = EifSample::new("x", 0.3, vec![0.1, -0.2, 0.1]).unwrap();
        let c = contrast(&e, &e).unwrap();
        assert_eq!(c.point, 0.0);
        assert!(c.influence.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn survival_at_zero_is_one() {
        let recs = (0..20)
            .map(|i| rec(i, 1.0 + i as f64, i % 3 != 0, (i % 2) as u8, None))
            .collect();
        let d = Dataset::new(vec![], recs).unwrap();
        let b = fit_bundle(
            &d,
            &d.all_rows(),
            &LearnerLibrary::covariate_free(None),
            &BundleOptions::new(5.0, None),
        )
        .unwrap();
        let e = onestep_surv(&b, &d, 1, 0.0).unwrap();
        assert_eq!(e.point, 1.0);
        assert!(e.influence.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_rule_for_binary_marker() {
        let c = EifSample::new("c", 0.2, vec![0.5, -0.5]).unwrap();
        let psi = integrate_contrasts(&[0.0], &[c], PsiRule::Step { upper: 1.0 }).unwrap();
        assert_eq!(psi.point, 0.2);
        assert!(integrate_contrasts(&[0.0], &[psi.clone()], PsiRule::Trapezoid).is_err());
    }

    #[test]
    fn constant_contrast_rectangle() {
        let grid: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
        let cs: Vec<EifSample> = grid
            .iter()
            .map(|_| EifSample::new("c", 0.03, vec![0.0; 4]).unwrap())
            .collect();
        let psi = integrate_contrasts(&grid, &cs, PsiRule::Trapezoid).unwrap();
        assert!((psi.point - 3.0).abs() < 1e-12);
    }
}
