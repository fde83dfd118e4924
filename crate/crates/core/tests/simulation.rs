use landmark_dl::simulate::{
    oracle_truth, replicate_rng, sample_latent, sample_scenario, weibull_inverse, ScenarioSpec, SCENARIO1_ETA,
    SCENARIO1_SURVIVAL, SCENARIO2_SURVIVAL,
};
use rand::Rng;

fn calibrated(mut s: ScenarioSpec) -> ScenarioSpec {
    s.calibrate().unwrap();
    s
}

#[test]
fn quadrature_truth_agrees_with_brute_force() {
    for spec in [ScenarioSpec::scenario1(), ScenarioSpec::scenario3()] {
        let spec = calibrated(spec);
        let q = spec.quadrature_truth();
        let o = oracle_truth(&spec, 200_000, 17).unwrap();
        for a in 0..2 {
            assert!(
                (q.eta[a] - o.truth.eta[a]).abs() < 4.0 * o.se.eta[a],
                "{} eta{a}",
                spec.name
            );
            assert!(
                (q.surv[a] - o.truth.surv[a]).abs() < 4.0 * o.se.surv[a],
                "{} S{a}",
                spec.name
            );
            assert!(
                (q.psi[a] - o.truth.psi[a]).abs() < 4.0 * o.se.psi[a],
                "{} psi{a}",
                spec.name
            );
        }
    }
}

#[test]
fn calibrated_truths_hit_targets() {
    let s1 = calibrated(ScenarioSpec::scenario1()).quadrature_truth();
    let s2 = calibrated(ScenarioSpec::scenario2()).quadrature_truth();
    for a in 0..2 {
        assert!((s1.surv[a] - SCENARIO1_SURVIVAL[a]).abs() < 1e-8);
        assert!((s1.eta[a] - SCENARIO1_ETA[a]).abs() < 1e-8);
        assert!((s2.surv[a] - SCENARIO2_SURVIVAL[a]).abs() < 1e-8);
    }
}

#[test]
fn binary_covariate_frequency() {
    let spec = calibrated(ScenarioSpec::scenario1());
    let mut rng = replicate_rng(3, 0);
    let n = 1_000_000;
    let hits = (0..n).filter(|_| sample_latent(&spec, &mut rng).l2 == 1.0).count();
    assert!((hits as f64 / n as f64 - spec.covariates.p_l2).abs() < 0.001);
}

/// Kolmogorov–Smirnov distance of a sample from Uniform(0, 1).
fn ks_uniform(mut u: Vec<f64>) -> f64 {
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn event_times_follow_the_model() {
    let spec = calibrated(ScenarioSpec::scenario2());
    let mut rng = replicate_rng(5, 0);
    let n = 20_000;
    let pit: Vec<f64> = (0..n)
        .map(|_| {
            let s = sample_latent(&spec, &mut rng);
            spec.survival(s.a, s.l1, s.l2, s.t)
        })
        .collect();
    // 1% critical value
    assert!(ks_uniform(pit) < 1.63 / (n as f64).sqrt());
}

#[test]
fn weibull_inverse_matches_cumulative_hazard() {
    let mut rng = replicate_rng(6, 0);
    for _ in 0..100 {
        let e: f64 = rng.random::<f64>() * 5.0;
        let lp: f64 = rng.random::<f64>() * 4.0 - 12.0;
        let shape = 1.0 + rng.random::<f64>();
        let t = weibull_inverse(e, lp, shape);
        assert!((lp.exp() * t.powf(shape) - e).abs() < 1e-9 * (1.0 + e));
    }
}

#[test]
fn scenario3_assignment_depends_on_covariates() {
    let spec = calibrated(ScenarioSpec::scenario3());
    let data = sample_scenario(&spec, 20_000, &mut replicate_rng(8, 0)).unwrap();
    let share = |pred: &dyn Fn(f64) -> bool| {
        let g: Vec<_> = data.records().iter().filter(|r| pred(r.covariates[1])).collect();
        g.iter().filter(|r| r.treatment == 1).count() as f64 / g.len() as f64
    };
    let with = share(&|l2| l2 == 1.0);
    let without = share(&|l2| l2 == 0.0);
    assert!(without - with > 0.05, "{without} vs {with}");
}

#[test]
fn replicate_streams_are_reproducible() {
    let spec = calibrated(ScenarioSpec::scenario1());
    let a = sample_scenario(&spec, 50, &mut replicate_rng(9, 4)).unwrap();
    let b = sample_scenario(&spec, 50, &mut replicate_rng(9, 4)).unwrap();
    let c = sample_scenario(&spec, 50, &mut replicate_rng(9, 5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
