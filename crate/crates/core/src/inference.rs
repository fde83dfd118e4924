//! Influence-function based standard errors, joint covariances, simplex
//! summaries with confidence ellipses, and the two-arm tests.

use serde::{Deserialize, Serialize};

use crate::crossfit::{crossfit_many, BundleProvider, Estimand};
use crate::data::Dataset;
use crate::error::{estimation, validation, Result};
use crate::estimators::{contrast, EifSample, EstimateReport};
use crate::numeric::{chi2_quantile, chi2_sf, norm_sf, stable_mean, stable_sum};

/// `P_n (D - mean D)^2`, the plug-in variance of the influence values.
pub fn influence_variance(e: &EifSample) -> f64 {
    let m = stable_mean(&e.influence);
    let sq: Vec<f64> = e.influence.iter().map(|d| (d - m).powi(2)).collect();
    stable_sum(&sq) / e.n as f64
}

/// Whether the influence values average to zero, as a one-step estimate's
/// must. A constant nonzero vector is the typical breach.
pub fn influence_centered(e: &EifSample) -> bool {
    let scale = e.influence.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    stable_mean(&e.influence).abs() <= 1e-8 * scale
}

/// Standard error `sqrt(P_n (D - mean D)^2 / n)` and a Wald interval.
pub fn se_ci(e: &EifSample, level: f64) -> Result<EstimateReport> {
    if e.n < 2 {
        return Err(validation(format!("{}: standard errors need n >= 2", e.label)));
    }
    if !influence_centered(e) {
        log::warn!(
            "{}: influence values average to {:.3e}, not zero",
            e.label,
            e.influence_mean()
        );
    }
    let se = (influence_variance(e) / e.n as f64).sqrt();
    if se == 0.0 {
        log::warn!("{}: zero influence variance; the interval is degenerate", e.label);
    }
    Ok(EstimateReport::wald(e.point, se, level))
}

/// Two-sided normal p-value for `estimate = 0`.
pub fn two_sided_p(r: &EstimateReport) -> f64 {
    if r.std_error == 0.0 {
        return if r.estimate == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * norm_sf((r.estimate / r.std_error).abs())
}

/// Covariance matrix of the estimates: entry `(i, j)` is the empirical
/// covariance of influence vectors `i` and `j`, divided by `n`.
pub fn joint_cov(samples: &[&EifSample]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let n = first.n;
    if samples.iter().any(|s| s.n != n) {
        return Err(validation("joint covariance of influence samples of different sizes"));
    }
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let m = stable_mean(&s.influence);
            s.influence.iter().map(|d| d - m).collect()
        })
        .collect();
    let k = samples.len();
    let mut cov = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let prod: Vec<f64> = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).collect();
            let v = stable_sum(&prod) / n as f64 / n as f64;
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    Ok(cov)
}

pub type Mat2 = [[f64; 2]; 2];

/// One arm's state-occupation probabilities at the landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexSummary {
    pub arm: u8,
    /// Alive with marker at or below the threshold: `S - η`.
    pub q0: f64,
    /// Alive with marker above the threshold: `η`.
    pub q1: f64,
    /// Dead: `1 - S`.
    pub qd: f64,
    /// Covariance of the `(Q1, QD)` estimates.
    pub cov_q1_qd: Mat2,
    pub level: f64,
}

impl SimplexSummary {
    /// Barycentric `(Q0, Q1, QD)` for drawing, clipped into the simplex.
    /// The flag reports whether clipping was needed.
    pub fn render_coords(&self) -> ([f64; 3], bool) {
        clip_to_simplex([self.q0, self.q1, self.qd])
    }
}

/// Clips negative coordinates to zero and renormalizes.
pub fn clip_to_simplex(p: [f64; 3]) -> ([f64; 3], bool) {
    if p.iter().all(|&v| v >= 0.0) {
        return (p, false);
    }
    let c = p.map(|v| v.max(0.0));
    let s: f64 = c.iter().sum();
    if s <= 0.0 {
        return ([1.0 / 3.0; 3], true);
    }
    (c.map(|v| v / s), true)
}

/// Builds the arm-`arm` simplex summary from `η̂_a` and `Ŝ_a` samples.
pub fn simplex_point(eta: &EifSample, surv: &EifSample, arm: u8, level: f64) -> Result<SimplexSummary> {
    let neg_surv = surv.combine(-1.0, surv, 0.0, "QD")?;
    let cov = joint_cov(&[eta, &neg_surv])?;
    let q1 = eta.point;
    let qd = 1.0 - surv.point;
    let q0 = 1.0 - q1 - qd;
    if q0 < 0.0 || q1 < 0.0 || qd < 0.0 {
        log::warn!("arm {arm}: simplex point ({q0:.4}, {q1:.4}, {qd:.4}) lies outside the simplex; drawing clipped");
    }
    Ok(SimplexSummary {
        arm,
        q0,
        q1,
        qd,
        cov_q1_qd: [[cov[0][0], cov[0][1]], [cov[1][0], cov[1][1]]],
        level,
    })
}

/// Boundary of the Wald confidence region for `(Q1, QD)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// `(Q1, QD)` boundary points.
    pub boundary: Vec<[f64; 2]>,
    /// The same points as barycentric `(Q0, Q1, QD)`.
    pub barycentric: Vec<[f64; 3]>,
    /// Covariance was singular; the region collapsed to a segment.
    pub degenerate: bool,
    /// Part of the region leaves the simplex.
    pub clipped: bool,
}

/// Eigenvalues (descending) and unit eigenvectors of a symmetric 2×2.
pub fn sym_eigen(m: &Mat2) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let l1 = mean + r;
    let l2 = mean - r;
    let v1 = if b != 0.0 {
        let (x, y) = (l1 - d, b);
        let n = x.hypot(y);
        [x / n, y / n]
    } else if a >= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    ([l1, l2], [v1, [-v1[1], v1[0]]])
}

pub fn confidence_ellipse(s: &SimplexSummary, points: usize) -> Ellipse {
    let c = chi2_quantile(s.level, 2);
    let ([l1, l2], [v1, v2]) = sym_eigen(&s.cov_q1_qd);
    let l1 = l1.max(0.0);
    let degenerate = l2 <= 1e-12 * l1.max(f64::MIN_POSITIVE);
    let (r1, r2) = ((c * l1).sqrt(), if degenerate { 0.0 } else { (c * l2).sqrt() });
    if degenerate {
        log::warn!("arm {}: singular covariance; confidence region is a segment", s.arm);
    }
    let points = points.max(3);
    let boundary: Vec<[f64; 2]> = (0..points)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
            let (u, w) = (r1 * phi.cos(), r2 * phi.sin());
            [s.q1 + u * v1[0] + w * v2[0], s.qd + u * v1[1] + w * v2[1]]
        })
        .collect();
    let barycentric: Vec<[f64; 3]> = boundary.iter().map(|&[q1, qd]| [1.0 - q1 - qd, q1, qd]).collect();
    let clipped = barycentric.iter().any(|p| p.iter().any(|&v| v < 0.0));
    Ellipse {
        boundary,
        barycentric,
        degenerate,
        clipped,
    }
}

/// `(θ - center)' Σ⁻¹ (θ - center)`.
pub fn mahalanobis2(theta: [f64; 2], center: [f64; 2], cov: &Mat2) -> Result<f64> {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if !(det > 0.0) {
        return Err(estimation("covariance matrix is singular"));
    }
    let d = [theta[0] - center[0], theta[1] - center[1]];
    let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    Ok(d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

impl WaldResult {
    pub fn from_statistic(statistic: f64, df: u32) -> Self {
        Self {
            statistic,
            df,
            p_value: chi2_sf(statistic, df),
        }
    }
}

/// Test of equal `(Q1, QD)` in the two arms. `cross_cov[i][j]` is the
/// covariance between arm-1 coordinate `i` and arm-0 coordinate `j`.
pub fn wald_equality(s1: &SimplexSummary, s0: &SimplexSummary, cross_cov: &Mat2) -> Result<WaldResult> {
    let d = [s1.q1 - s0.q1, s1.qd - s0.qd];
    if d == [0.0, 0.0] {
        return Ok(WaldResult::from_statistic(0.0, 2));
    }
    let (a, b, c) = (&s1.cov_q1_qd, &s0.cov_q1_qd, cross_cov);
    let mut v = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            v[i][j] = a[i][j] + b[i][j] - c[i][j] - c[j][i];
        }
    }
    let w = mahalanobis2(d, [0.0, 0.0], &v).map_err(|_| {
        estimation("Wald equality test: singular covariance of the arm difference; lower the level of detail (fewer estimands) or use a pooled test")
    })?;
    Ok(WaldResult::from_statistic(w, 2))
}

/// Cross-arm covariance block for [`wald_equality`] from the four samples.
pub fn cross_cov(eta1: &EifSample, surv1: &EifSample, eta0: &EifSample, surv0: &EifSample) -> Result<Mat2> {
    let nd1 = surv1.combine(-1.0, surv1, 0.0, "QD1")?;
    let nd0 = surv0.combine(-1.0, surv0, 0.0, "QD0")?;
    let cov = joint_cov(&[eta1, &nd1, eta0, &nd0])?;
    Ok([[cov[0][2], cov[0][3]], [cov[1][2], cov[1][3]]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityResult {
    pub weight: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    /// One-sided: small values reject `w (S1 - S0) + (1 - w)(η1 - η0) <= 0`.
    pub p_value: f64,
}

pub fn utility_test(eta_contrast: &EifSample, surv1: &EifSample, surv0: &EifSample, w: f64) -> Result<UtilityResult> {
    if !(0.0..=1.0).contains(&w) {
        return Err(validation(format!("utility weight must lie in [0, 1], got {w}")));
    }
    let sc = contrast(surv1, surv0)?;
    let u = sc.combine(w, eta_contrast, 1.0 - w, "utility")?;
    let r = se_ci(&u, 0.95)?;
    let z = if r.std_error > 0.0 {
        r.estimate / r.std_error
    } else if r.estimate == 0.0 {
        0.0
    } else {
        r.estimate.signum() * f64::INFINITY
    };
    Ok(UtilityResult {
        weight: w,
        estimate: r.estimate,
        std_error: r.std_error,
        z,
        p_value: norm_sf(z),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub y: f64,
    pub eta1: f64,
    pub eta0: f64,
    pub contrast: EstimateReport,
}

/// Pointwise `η₁(y) − η₀(y)` with pointwise intervals over `grid`.
#[allow(clippy::too_many_arguments)]
pub fn eta_curve(
    data: &Dataset,
    provider: &dyn BundleProvider,
    folds: usize,
    seed: u64,
    t: f64,
    grid: &[f64],
    mar: bool,
    level: f64,
) -> Result<Vec<CurvePoint>> {
    if grid.is_empty() {
        return Err(validation("empty threshold grid"));
    }
    let estimands: Vec<Estimand> = grid
        .iter()
        .flat_map(|&y| [Estimand::Eta { a: 1, y }, Estimand::Eta { a: 0, y }])
        .collect();
    let samples = crossfit_many(data, provider, folds, seed, t, mar, &estimands)?;
    grid.iter()
        .zip(samples.chunks(2))
        .map(|(&y, pair)| {
            let c = contrast(&pair[0], &pair[1])?;
            Ok(CurvePoint {
                y,
                eta1: pair[0].point,
                eta0: pair[1].point,
                contrast: se_ci(&c, level)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(v: Vec<f64>, point: f64) -> EifSample {
        EifSample::new("x", point, v).unwrap()
    }

    #[test]
    fn alternating_influence_se() {
        let e = sample((0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(), 0.0);
        let r = se_ci(&e, 0.95).unwrap();
        assert!((r.std_error - 0.1).abs() < 1e-15);
    }

    #[test]
    fn constant_influence_flagged() {
        assert!(!influence_centered(&sample(vec![0.3; 10], 0.0)));
    }

    #[test]
    fn diagonal_matches_se() {
        let e = sample(vec![0.5, -0.25, 0.1, -0.35], 0.2);
        let c = joint_cov(&[&e, &e]).unwrap();
        let se = se_ci(&e, 0.95).unwrap().std_error;
        assert!((c[0][0] - se * se).abs() < 1e-15);
        assert!((c[0][1] / c[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn simplex_point_coordinates() {
        let eta = sample(vec![0.0; 4], 0.32);
        let s = sample(vec![0.0; 4], 0.50);
        let p = simplex_point(&eta, &s, 1, 0.95).unwrap();
        assert!((p.q0 - 0.18).abs() < 1e-12 && p.q1 == 0.32 && p.qd == 0.5);
    }

    #[test]
    fn wald_p_value() {
        let w = WaldResult::from_statistic(8.1, 2);
        assert!((w.p_value - 0.017422374639493515).abs() < 1e-12);
    }

    #[test]
    fn isotropic_ellipse_is_circle() {
        let s = SimplexSummary {
            arm: 0,
            q0: 0.3,
            q1: 0.4,
            qd: 0.3,
            cov_q1_qd: [[1e-4, 0.0], [0.0, 1e-4]],
            level: 0.95,
        };
        let e = confidence_ellipse(&s, 64);
        let r = (1e-4 * 5.991464547107979_f64).sqrt();
        for p in &e.boundary {
            assert!(((p[0] - 0.4).hypot(p[1] - 0.3) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_ellipse_is_segment() {
        let s = SimplexSummary {
            arm: 0,
            q0: 0.3,
            q1: 0.4,
            qd: 0.3,
            cov_q1_qd: [[1e-4, 1e-4], [1e-4, 1e-4]],
            level: 0.95,
        };
        let e = confidence_ellipse(&s, 16);
        assert!(e.degenerate);
        for p in &e.boundary {
            assert!(((p[0] - 0.4) - (p[1] - 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_utility_is_half() {
        let z = sample(vec![0.0; 5], 0.0);
        let u = utility_test(&z, &z, &z, 0.3).unwrap();
        assert_eq!((u.z, u.p_value), (0.0, 0.5));
    }
}
