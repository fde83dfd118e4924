use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenario::{ScenarioSpec, Truth};
use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::numeric::stable_mean;

/// Covariate names of simulated datasets.
pub const COVARIATES: [&str; 2] = ["L1", "L2"];

/// One subject's full (partly unobserved) draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentSubject {
    pub l1: f64,
    pub l2: f64,
    pub a: u8,
    pub t: f64,
    pub c: f64,
    pub y: f64,
}

/// Inverse of `Λ(u) = exp(lp) u^shape` at `e`.
pub fn weibull_inverse(e: f64, lp: f64, shape: f64) -> f64 {
    (e * (-lp).exp()).powf(1.0 / shape)
}

fn ensure_calibrated(spec: &ScenarioSpec) -> Result<()> {
    spec.validate()?;
    if !spec.is_calibrated() {
        return Err(Error::Config(format!(
            "scenario {} must be calibrated before sampling",
            spec.name
        )));
    }
    Ok(())
}

fn draw_covariates<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> (f64, f64) {
    let c = &spec.covariates;
    let k = (rng.random::<f64>() < c.p_l2) as usize;
    let z: f64 = rng.sample(StandardNormal);
    (c.l1_mean[k] + c.l1_var[k].sqrt() * z, k as f64)
}

fn draw_event<R: Rng + ?Sized>(spec: &ScenarioSpec, a: u8, l1: f64, l2: f64, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    weibull_inverse(e, spec.event_linear(a, l1, l2), spec.event[a as usize].shape)
}

fn draw_outcome<R: Rng + ?Sized>(spec: &ScenarioSpec, a: u8, l1: f64, l2: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    spec.outcome_mean(a, l1, l2) + spec.outcome[a as usize].var.sqrt() * z
}

pub fn sample_latent<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> LatentSubject {
    let (l1, l2) = draw_covariates(spec, rng);
    let a = (rng.random::<f64>() < spec.propensity.prob(l1, l2)) as u8;
    let t = draw_event(spec, a, l1, l2, rng);
    let cens = &spec.censoring;
    let e: f64 = rng.sample(Exp1);
    let c = weibull_inverse(e, cens.intercept, cens.shape + cens.shape_slope * a as f64);
    let y = draw_outcome(spec, a, l1, l2, rng);
    LatentSubject { l1, l2, a, t, c, y }
}

/// Observed record: the marker is kept only for subjects seen alive at the
/// landmark.
pub fn observe(s: &LatentSubject, id: usize, landmark: f64) -> SubjectRecord {
    let time = s.t.min(s.c);
    let mut r = SubjectRecord::new(id.to_string(), time, s.t <= s.c, s.a).with_covariates(vec![s.l1, s.l2]);
    if time > landmark {
        r = r.with_marker(s.y);
    }
    r
}

/// `n` observed subjects from a calibrated scenario.
pub fn sample_scenario<R: Rng + ?Sized>(spec: &ScenarioSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    ensure_calibrated(spec)?;
    let records = (0..n)
        .map(|i| observe(&sample_latent(spec, rng), i, spec.landmark_t))
        .collect();
    Dataset::new(COVARIATES.iter().map(|s| s.to_string()).collect(), records)
}

/// Replicate stream `rep` of a root seed.
pub fn replicate_rng(root: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(rep);
    rng
}

/// Brute-force truths with their Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub truth: Truth,
    pub se: Truth,
    pub n: usize,
    pub seed: u64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = stable_mean(v);
    let ss: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
    let var = stable_mean(&ss) * v.len() as f64 / (v.len() - 1) as f64;
    (m, (var / v.len() as f64).sqrt())
}

fn oracle_cache() -> &'static Mutex<HashMap<String, OracleTruth>> {
    static CACHE: OnceLock<Mutex<HashMap<String, OracleTruth>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Potential outcomes under both arms for `n` subjects, no censoring.
pub fn oracle_truth(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<OracleTruth> {
    ensure_calibrated(spec)?;
    if n < 2 {
        return Err(Error::Config("oracle sample size must be >= 2".into()));
    }
    let key = format!("{}|{n}|{seed}", serde_json::to_string(spec)?);
    if let Some(hit) = oracle_cache().lock().expect("oracle cache poisoned").get(&key) {
        return Ok(*hit);
    }
    let (t, y) = (spec.landmark_t, spec.threshold_y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: [[Vec<f64>; 3]; 2] = Default::default();
    for arm in cols.iter_mut() {
        for c in arm.iter_mut() {
            c.reserve(n);
        }
    }
    for _ in 0..n {
        let (l1, l2) = draw_covariates(spec, &mut rng);
        for a in 0..=1u8 {
            let alive = draw_event(spec, a, l1, l2, &mut rng) > t;
            let yv = draw_outcome(spec, a, l1, l2, &mut rng);
            let arm = &mut cols[a as usize];
            arm[0].push((alive && yv > y) as u8 as f64);
            arm[1].push(alive as u8 as f64);
            arm[2].push(if alive { yv } else { 0.0 });
        }
    }
    let mut truth = Truth::default();
    let mut se = Truth::default();
    for a in 0..2 {
        (truth.eta[a], se.eta[a]) = mean_se(&cols[a][0]);
        (truth.surv[a], se.surv[a]) = mean_se(&cols[a][1]);
        (truth.psi[a], se.psi[a]) = mean_se(&cols[a][2]);
    }
    let out = OracleTruth { truth, se, n, seed };
    oracle_cache().lock().expect("oracle cache poisoned").insert(key, out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_exponential_gives_unit_time() {
        assert_eq!(weibull_inverse(1.0, 0.0, 1.0), 1.0);
        let t = weibull_inverse(0.3, -2.0, 1.64);
        assert!(((-2.0f64).exp() * t.powf(1.64) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn marker_present_iff_followup_beyond_landmark() {
        let mut spec = ScenarioSpec::scenario1();
        spec.calibrate().unwrap();
        let d = sample_scenario(&spec, 2000, &mut replicate_rng(1, 0)).unwrap();
        for r in d.records() {
            assert_eq!(r.marker.is_some(), r.time > spec.landmark_t);
        }
    }

    #[test]
    fn uncalibrated_spec_rejected() {
        let spec = ScenarioSpec::scenario1();
        assert!(sample_scenario(&spec, 10, &mut replicate_rng(1, 0)).is_err());
    }

    #[test]
    fn replicate_streams_differ_and_repeat() {
        let a: u64 = replicate_rng(5, 0).random();
        let b: u64 = replicate_rng(5, 1).random();
        let c: u64 = replicate_rng(5, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
