//! A biomarker `Z` that improves survival under treatment while lowering
//! the chance of being alive with a high marker.
//!
//! `Z` takes `z1` or `z2` with probability 1/2, the death hazard is 1 under
//! control and `Z` under treatment, and survivors have marker `Y = Z`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::estimators::{onestep_eta, onestep_surv, EifSample};
use crate::nuisance::{fit_bundle, BundleOptions, LearnerLibrary};
use crate::numeric::stable_mean;

/// Independent exponential censoring rate used when simulating.
pub const CENSORING_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleValues {
    /// `P(T > t | A = 1) / P(T > t | A = 0)`.
    pub survival_ratio: f64,
    /// `P(Z = z2 | T > t, A = 1)`.
    pub selection: f64,
    /// `P(T > t, Y > y | A = 1) / P(T > t, Y > y | A = 0)` for `z1 < y < z2`.
    pub joint_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedValue {
    pub estimate: f64,
    pub std_error: f64,
    pub analytic: f64,
}

impl SimulatedValue {
    pub fn z(&self) -> f64 {
        (self.estimate - self.analytic) / self.std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub z1: f64,
    pub z2: f64,
    pub t: f64,
    pub analytic: CounterexampleValues,
    pub n: usize,
    pub seed: u64,
    pub survival_ratio: SimulatedValue,
    pub selection: SimulatedValue,
    pub joint_factor: SimulatedValue,
}

impl CounterexampleReport {
    /// Every simulated value within `k` standard errors of its analytic value.
    pub fn within(&self, k: f64) -> bool {
        [self.survival_ratio, self.selection, self.joint_factor]
            .iter()
            .all(|v| v.z().abs() <= k)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "counterexample z1 = {}, z2 = {}, t = {} (n = {}, seed = {})\n{:<15} {:>10} {:>10} {:>10} {:>8}\n",
            self.z1, self.z2, self.t, self.n, self.seed, "", "analytic", "simulated", "SE", "z"
        );
        for (name, v) in [
            ("survival ratio", self.survival_ratio),
            ("selection", self.selection),
            ("joint factor", self.joint_factor),
        ] {
            s.push_str(&format!(
                "{:<15} {:>10.4} {:>10.4} {:>10.4} {:>8.2}\n",
                name,
                v.analytic,
                v.estimate,
                v.std_error,
                v.z()
            ));
        }
        s
    }
}

/// Closed-form values. Requires `0 < z1 < 1 < z2` and `t > ln 2 / (1 - z1)`.
pub fn counterexample_scenario(z1: f64, z2: f64, t: f64) -> Result<CounterexampleValues> {
    if !(0.0 < z1 && z1 < 1.0 && 1.0 < z2 && z2.is_finite()) {
        return Err(Error::Config(format!(
            "counterexample needs 0 < z1 < 1 < z2, got z1 = {z1}, z2 = {z2}"
        )));
    }
    let bound = std::f64::consts::LN_2 / (1.0 - z1);
    if !(t > bound && t.is_finite()) {
        return Err(Error::Config(format!(
            "counterexample needs t > ln(2)/(1 - z1) = {bound}, got t = {t}"
        )));
    }
    let e1 = ((1.0 - z1) * t).exp();
    let e2 = ((1.0 - z2) * t).exp();
    let d = 1.0 + ((z2 - z1) * t).exp();
    Ok(CounterexampleValues {
        survival_ratio: 0.5 * e1 + 0.5 * e2,
        selection: 1.0 / d,
        joint_factor: (e2 + e1) / d,
    })
}

/// Randomized trial of size `n` from the counterexample law, with covariate
/// `Z` and light independent censoring.
pub fn sample_counterexample(z1: f64, z2: f64, t: f64, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let z = if rng.random::<bool>() { z2 } else { z1 };
            let a = rng.random::<bool>() as u8;
            let rate = if a == 1 { z } else { 1.0 };
            let e: f64 = rng.sample(Exp1);
            let death = e / rate;
            let e: f64 = rng.sample(Exp1);
            let cens = e / CENSORING_RATE;
            let time = death.min(cens);
            let mut r = SubjectRecord::new(i.to_string(), time, death <= cens, a).with_covariates(vec![z]);
            if time > t {
                r = r.with_marker(z);
            }
            r
        })
        .collect();
    Dataset::new(vec!["Z".into()], records)
}

fn ratio(num: &EifSample, den: &EifSample, analytic: f64) -> SimulatedValue {
    let r = num.point / den.point;
    let inf: Vec<f64> = num
        .influence
        .iter()
        .zip(&den.influence)
        .map(|(a, b)| (a - r * b) / den.point)
        .collect();
    let m = stable_mean(&inf);
    let v: Vec<f64> = inf.iter().map(|d| (d - m).powi(2)).collect();
    SimulatedValue {
        estimate: r,
        std_error: (stable_mean(&v) / num.n as f64).sqrt(),
        analytic,
    }
}

/// Analytic values next to one-step estimates from a simulated trial.
pub fn simulate_counterexample(z1: f64, z2: f64, t: f64, n: usize, seed: u64) -> Result<CounterexampleReport> {
    let analytic = counterexample_scenario(z1, z2, t)?;
    let data = sample_counterexample(z1, z2, t, n, seed)?;
    let y = 0.5 * (z1 + z2);
    let lib = LearnerLibrary::covariate_free(Some(0.5));
    let bundle = fit_bundle(&data, &data.all_rows(), &lib, &BundleOptions::new(t, Some(y)))?;
    let eta: Vec<EifSample> = (0..=1)
        .map(|a| onestep_eta(&bundle, &data, a, t, y, false))
        .collect::<Result<_>>()?;
    let surv: Vec<EifSample> = (0..=1)
        .map(|a| onestep_surv(&bundle, &data, a, t))
        .collect::<Result<_>>()?;
    Ok(CounterexampleReport {
        z1,
        z2,
        t,
        analytic,
        n,
        seed,
        survival_ratio: ratio(&surv[1], &surv[0], analytic.survival_ratio),
        selection: ratio(&eta[1], &surv[1], analytic.selection),
        joint_factor: ratio(&eta[1], &eta[0], analytic.joint_factor),
    })
}
