//! Declarative data-generating processes and their exact truths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{expit, norm_pdf, norm_sf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PropensityLaw {
    Constant {
        p: f64,
    },
    /// `expit(intercept + l1 (L1 - l1_center) + l2 L2)`.
    Logistic {
        intercept: f64,
        l1: f64,
        l2: f64,
        #[serde(default)]
        l1_center: f64,
    },
}

impl PropensityLaw {
    pub fn prob(&self, l1: f64, l2: f64) -> f64 {
        match *self {
            PropensityLaw::Constant { p } => p,
            PropensityLaw::Logistic {
                intercept,
                l1: b1,
                l2: b2,
                l1_center,
            } => expit(intercept + b1 * (l1 - l1_center) + b2 * l2),
        }
    }
}

/// `L2 ~ Bernoulli(p_l2)`, `L1 | L2 = k ~ N(l1_mean[k], l1_var[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateLaw {
    pub p_l2: f64,
    pub l1_mean: [f64; 2],
    pub l1_var: [f64; 2],
}

/// `Y | L, A = a ~ N(intercept + l1 L1 + l2 (L2 - E L2), var)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeArm {
    pub intercept: f64,
    pub l1: f64,
    pub l2: f64,
    pub var: f64,
}

/// `Λ_T(u | L, A = a) = exp(intercept + l1 L1 + l2 (L2 - E L2)) u^shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventArm {
    pub intercept: f64,
    pub l1: f64,
    pub l2: f64,
    pub shape: f64,
}

/// `Λ_C(u | A) = exp(intercept) u^(shape + shape_slope A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringLaw {
    pub intercept: f64,
    pub shape: f64,
    pub shape_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub propensity: PropensityLaw,
    pub covariates: CovariateLaw,
    pub outcome: [OutcomeArm; 2],
    pub event: [EventArm; 2],
    pub censoring: CensoringLaw,
    pub landmark_t: f64,
    pub threshold_y: f64,
    pub time_unit: String,
    /// Per-arm `S_a(t)` the event intercepts are calibrated to, if any.
    #[serde(default)]
    pub calibrate_survival: Option<[f64; 2]>,
    /// Per-arm `η_a(y)` the outcome intercepts are calibrated to, after
    /// the event intercepts.
    #[serde(default)]
    pub calibrate_eta: Option<[f64; 2]>,
}

/// Survival targets used to calibrate the built-in scenarios.
pub const SCENARIO1_SURVIVAL: [f64; 2] = [0.8735, 0.8931];
pub const SCENARIO2_SURVIVAL: [f64; 2] = [0.7819, 0.8008];
pub const SCENARIO1_ETA: [f64; 2] = [0.3598, 0.4232];
pub const SCENARIO2_ETA: [f64; 2] = [0.3889, 0.4497];

const LANDMARK_DAYS: f64 = 730.0;

fn base_covariates() -> CovariateLaw {
    CovariateLaw {
        p_l2: 0.16,
        l1_mean: [46.0, 51.0],
        l1_var: [225.0, 235.0],
    }
}

fn base_outcome() -> [OutcomeArm; 2] {
    [
        OutcomeArm {
            intercept: 40.0,
            l1: 0.90,
            l2: 2.0,
            var: 140.0,
        },
        OutcomeArm {
            intercept: 51.0,
            l1: 0.86,
            l2: 2.6,
            var: 148.0,
        },
    ]
}

fn base_censoring() -> CensoringLaw {
    CensoringLaw {
        intercept: -20.0,
        shape: 2.7,
        shape_slope: 0.2,
    }
}

impl ScenarioSpec {
    /// Randomized, weak covariate effects on the event time.
    pub fn scenario1() -> Self {
        Self {
            name: "scenario1".into(),
            propensity: PropensityLaw::Constant { p: 0.5 },
            covariates: base_covariates(),
            outcome: base_outcome(),
            event: [
                EventArm {
                    intercept: -12.8,
                    l1: -0.023,
                    l2: -0.56,
                    shape: 1.64,
                },
                EventArm {
                    intercept: -13.0,
                    l1: -0.020,
                    l2: -0.23,
                    shape: 1.64,
                },
            ],
            censoring: base_censoring(),
            landmark_t: LANDMARK_DAYS,
            threshold_y: 45.0,
            time_unit: "days".into(),
            calibrate_survival: Some(SCENARIO1_SURVIVAL),
            calibrate_eta: Some(SCENARIO1_ETA),
        }
    }

    /// Randomized, strong covariate effects on the event time.
    pub fn scenario2() -> Self {
        let mut s = Self::scenario1();
        s.name = "scenario2".into();
        s.event[0].intercept = -20.8;
        s.event[0].l1 = -0.83;
        s.event[1].intercept = -21.0;
        s.event[1].l1 = -0.75;
        s.calibrate_survival = Some(SCENARIO2_SURVIVAL);
        s.calibrate_eta = Some(SCENARIO2_ETA);
        s
    }

    /// Scenario 2 with confounded treatment assignment; `L1` enters the
    /// propensity centered at its mean.
    pub fn scenario3() -> Self {
        let mut s = Self::scenario2();
        s.name = "scenario3".into();
        let l1_center = s.mean_l1();
        s.propensity = PropensityLaw::Logistic {
            intercept: 1.0,
            l1: 0.025,
            l2: -0.5,
            l1_center,
        };
        s
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "1" | "scenario1" => Some(Self::scenario1()),
            "2" | "scenario2" => Some(Self::scenario2()),
            "3" | "scenario3" => Some(Self::scenario3()),
            _ => None,
        }
    }

    /// Both arms follow the (calibrated) arm-0 laws.
    pub fn null_modification(&self) -> Result<Self> {
        let mut s = self.clone();
        s.calibrate()?;
        s.name = format!("{}-null", self.name);
        s.outcome[1] = s.outcome[0].clone();
        s.event[1] = s.event[0].clone();
        s.censoring.shape_slope = 0.0;
        Ok(s)
    }

    /// Reads a scenario file: `version = 1` and a `[scenario]` table.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            version: u32,
            scenario: ScenarioSpec,
        }
        let f: File = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if f.version != crate::config::CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported scenario file version {}",
                f.version
            )));
        }
        f.scenario.validate()?;
        Ok(f.scenario)
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct File<'a> {
            version: u32,
            scenario: &'a ScenarioSpec,
        }
        toml::to_string(&File {
            version: crate::config::CONFIG_VERSION,
            scenario: self,
        })
        .expect("scenario is always representable as TOML")
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrate_survival.is_none() && self.calibrate_eta.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario {}: {m}", self.name)));
        let c = &self.covariates;
        if !(c.p_l2 > 0.0 && c.p_l2 < 1.0) {
            return bad("P(L2 = 1) must lie in (0, 1)");
        }
        if c.l1_var.iter().any(|&v| !(v > 0.0)) || self.outcome.iter().any(|o| !(o.var > 0.0)) {
            return bad("variances must be positive");
        }
        if self.event.iter().any(|e| !(e.shape > 0.0)) {
            return bad("event shapes must be positive");
        }
        if !(self.censoring.shape > 0.0 && self.censoring.shape + self.censoring.shape_slope > 0.0) {
            return bad("censoring shapes must be positive");
        }
        if let PropensityLaw::Constant { p } = self.propensity {
            if !(p > 0.0 && p < 1.0) {
                return bad("treatment probability must lie in (0, 1)");
            }
        }
        if !(self.landmark_t > 0.0) {
            return bad("landmark time must be positive");
        }
        for targets in [self.calibrate_survival, self.calibrate_eta].into_iter().flatten() {
            if targets.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
                return bad("calibration targets must lie in (0, 1)");
            }
        }
        Ok(())
    }

    pub fn mean_l2(&self) -> f64 {
        self.covariates.p_l2
    }

    pub fn mean_l1(&self) -> f64 {
        let c = &self.covariates;
        (1.0 - c.p_l2) * c.l1_mean[0] + c.p_l2 * c.l1_mean[1]
    }

    pub fn event_linear(&self, a: u8, l1: f64, l2: f64) -> f64 {
        let e = &self.event[a as usize];
        e.intercept + e.l1 * l1 + e.l2 * (l2 - self.mean_l2())
    }

    pub fn outcome_mean(&self, a: u8, l1: f64, l2: f64) -> f64 {
        let o = &self.outcome[a as usize];
        o.intercept + o.l1 * l1 + o.l2 * (l2 - self.mean_l2())
    }

    /// `S(u | a, L)`.
    pub fn survival(&self, a: u8, l1: f64, l2: f64, u: f64) -> f64 {
        let e = &self.event[a as usize];
        (-(self.event_linear(a, l1, l2).exp() * u.powf(e.shape))).exp()
    }

    /// `K(u | a)`.
    pub fn censoring_survival(&self, a: u8, u: f64) -> f64 {
        let c = &self.censoring;
        (-(c.intercept.exp() * u.powf(c.shape + c.shape_slope * a as f64))).exp()
    }

    /// `E_L[f(L1, L2)]` by composite Simpson over `L1 | L2`.
    fn expect(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        const M: usize = 4000;
        const Z: f64 = 10.0;
        let h = 2.0 * Z / M as f64;
        let c = &self.covariates;
        let mut total = 0.0;
        for (k, w_l2) in [(0usize, 1.0 - c.p_l2), (1, c.p_l2)] {
            let (m, sd) = (c.l1_mean[k], c.l1_var[k].sqrt());
            let mut acc = 0.0;
            for j in 0..=M {
                let z = -Z + h * j as f64;
                let w = if j == 0 || j == M {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * norm_pdf(z) * f(m + sd * z, k as f64);
            }
            total += w_l2 * acc * h / 3.0;
        }
        total
    }

    /// Exact (quadrature) truths at the landmark and threshold.
    pub fn quadrature_truth(&self) -> Truth {
        let (t, y) = (self.landmark_t, self.threshold_y);
        let mut truth = Truth::default();
        for a in 0..=1u8 {
            let sd = self.outcome[a as usize].var.sqrt();
            truth.surv[a as usize] = self.expect(|l1, l2| self.survival(a, l1, l2, t));
            truth.eta[a as usize] =
                self.expect(|l1, l2| self.survival(a, l1, l2, t) * norm_sf((y - self.outcome_mean(a, l1, l2)) / sd));
            truth.psi[a as usize] = self.expect(|l1, l2| self.survival(a, l1, l2, t) * self.outcome_mean(a, l1, l2));
        }
        truth
    }

    /// Sets each arm's event intercept so that `S_a(t)` hits its target,
    /// then each outcome intercept so that `η_a(y)` hits its target.
    /// Returns the calibration log lines.
    pub fn calibrate(&mut self) -> Result<Vec<String>> {
        self.validate()?;
        let mut log_lines = Vec::new();
        let (t, y) = (self.landmark_t, self.threshold_y);
        if let Some(targets) = self.calibrate_survival {
            for a in 0..=1u8 {
                let i = a as usize;
                let printed = self.event[i].intercept;
                let b = self.bisect(targets[i], false, |spec, b| {
                    spec.event[i].intercept = b;
                    spec.expect(|l1, l2| spec.survival(a, l1, l2, t))
                })?;
                self.event[i].intercept = b;
                log_lines.push(format!(
                    "{}: arm {a} event intercept {printed} -> {b:.10} (S_{a}(t = {t} {}) = {})",
                    self.name, self.time_unit, targets[i]
                ));
            }
            self.calibrate_survival = None;
        }
        if let Some(targets) = self.calibrate_eta {
            for a in 0..=1u8 {
                let i = a as usize;
                let printed = self.outcome[i].intercept;
                let sd = self.outcome[i].var.sqrt();
                let b = self.bisect(targets[i], true, |spec, b| {
                    spec.outcome[i].intercept = b;
                    spec.expect(|l1, l2| spec.survival(a, l1, l2, t) * norm_sf((y - spec.outcome_mean(a, l1, l2)) / sd))
                })?;
                self.outcome[i].intercept = b;
                log_lines.push(format!(
                    "{}: arm {a} outcome intercept {printed} -> {b:.10} (eta_{a}(y = {y}) = {})",
                    self.name, targets[i]
                ));
            }
            self.calibrate_eta = None;
        }
        for line in &log_lines {
            log::info!("{line}");
        }
        Ok(log_lines)
    }

    /// Root of `f(b) = target` for `f` monotone in `b` on `[-200, 200]`.
    fn bisect(&self, target: f64, increasing: bool, f: impl Fn(&mut ScenarioSpec, f64) -> f64) -> Result<f64> {
        let mut work = self.clone();
        let (mut lo, mut hi) = (-200.0, 200.0);
        let sign = if increasing { 1.0 } else { -1.0 };
        let g = |w: &mut ScenarioSpec, b: f64| sign * (f(w, b) - target);
        if !(g(&mut work, lo) < 0.0 && g(&mut work, hi) > 0.0) {
            return Err(Error::Config(format!(
                "scenario {}: calibration target {target} is out of reach",
                self.name
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(&mut work, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Per-arm truths: `η_a(y)`, `S_a(t)`, `ψ_a = E[Y^a I(T^a > t)]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub eta: [f64; 2],
    pub surv: [f64; 2],
    pub psi: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_hits_targets() {
        let mut s = ScenarioSpec::scenario1();
        let log = s.calibrate().unwrap();
        assert_eq!(log.len(), 4);
        assert!(s.is_calibrated());
        let truth = s.quadrature_truth();
        assert!((truth.surv[0] - 0.8735).abs() < 1e-9);
        assert!((truth.surv[1] - 0.8931).abs() < 1e-9);
        assert!((truth.eta[0] - 0.3598).abs() < 1e-9);
        assert!((truth.eta[1] - 0.4232).abs() < 1e-9);
    }

    #[test]
    fn zero_hazard_truth() {
        let mut s = ScenarioSpec::scenario1();
        s.calibrate_survival = None;
        s.calibrate_eta = None;
        s.event[0].intercept = -1e3;
        let truth = s.quadrature_truth();
        assert!((truth.surv[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let s = ScenarioSpec::scenario3();
        assert_eq!(ScenarioSpec::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn builtins_validate() {
        for n in ["1", "2", "3"] {
            ScenarioSpec::builtin(n).unwrap().validate().unwrap();
        }
    }
}
