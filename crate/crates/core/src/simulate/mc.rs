use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::{replicate_rng, sample_scenario};
use super::scenario::{ScenarioSpec, Truth};
use crate::crossfit::{crossfit_many, BundleProvider, Estimand, LibraryProvider};
use crate::error::{Error, Result};
use crate::estimators::{kaplan_meier_greenwood, plugin_eta, unadjusted_eta_point};
use crate::inference::{cross_cov, se_ci, simplex_point, wald_equality};
use crate::nuisance::{LearnerLibrary, DEFAULT_FLOOR};
use crate::numeric::{stable_mean, z_crit};

pub const ESTIMANDS: [&str; 4] = ["eta0", "eta1", "S0", "S1"];
pub const METHODS: [&str; 3] = ["onestep", "unadjusted", "plugin"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub library: LearnerLibrary,
    pub folds: usize,
    pub floor: f64,
    pub level: f64,
    pub plugin: bool,
    /// Per-replicate Wald equality test of the two arms.
    pub wald: bool,
    /// `None` uses the scenario's quadrature truth.
    pub truth: Option<Truth>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl McConfig {
    /// Correctly specified parametric nuisances fit on the full sample.
    pub fn parametric() -> Self {
        Self {
            library: LearnerLibrary::parametric(2, None),
            folds: 1,
            floor: DEFAULT_FLOOR,
            level: 0.95,
            plugin: true,
            wald: false,
            truth: None,
            threads: None,
        }
    }

    /// Cross-validated selection from the default library, cross-fit.
    pub fn flexible(folds: usize) -> Self {
        Self {
            library: LearnerLibrary::default_for(2, None),
            folds,
            ..Self::parametric()
        }
    }
}

/// One replicate's estimates in [`ESTIMANDS`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimates {
    pub onestep: [f64; 4],
    pub onestep_se: [f64; 4],
    pub unadjusted: [f64; 4],
    /// Greenwood SEs for the survival entries; `NaN` for `η`.
    pub unadjusted_se: [f64; 4],
    pub plugin: Option<[f64; 4]>,
    pub wald_p: Option<f64>,
    pub floored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimand: String,
    pub method: String,
    pub mean: f64,
    pub bias: f64,
    pub se: Option<f64>,
    pub sd: f64,
    pub se_sd: Option<f64>,
    pub coverage: Option<f64>,
    pub rel_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub scenario: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub failures: usize,
    pub truth: Truth,
    pub rows: Vec<McRow>,
    /// Fraction of replicates with Wald p-value below `1 - level`.
    pub wald_rejection: Option<f64>,
    pub floored: usize,
    pub calibration: Vec<String>,
    #[serde(skip)]
    pub replicates: Vec<ReplicateEstimates>,
}

fn replicate(spec: &ScenarioSpec, n: usize, cfg: &McConfig, root: u64, rep: u64) -> Result<ReplicateEstimates> {
    let mut rng = replicate_rng(root, rep);
    let data = sample_scenario(spec, n, &mut rng)?;
    let seed: u64 = rng.random();
    let (t, y) = (spec.landmark_t, spec.threshold_y);
    let provider = LibraryProvider {
        library: cfg.library.clone(),
        t,
        floor: cfg.floor,
        mar: false,
    };
    let estimands = [
        Estimand::Eta { a: 0, y },
        Estimand::Eta { a: 1, y },
        Estimand::Surv { a: 0, u: t },
        Estimand::Surv { a: 1, u: t },
    ];
    let s = crossfit_many(&data, &provider, cfg.folds, seed, t, false, &estimands)?;
    let mut out = ReplicateEstimates {
        onestep: [0.0; 4],
        onestep_se: [0.0; 4],
        unadjusted: [0.0; 4],
        unadjusted_se: [f64::NAN; 4],
        plugin: None,
        wald_p: None,
        floored: s.iter().map(|e| e.floored).sum(),
    };
    for (j, e) in s.iter().enumerate() {
        out.onestep[j] = e.point;
        out.onestep_se[j] = se_ci(e, cfg.level)?.std_error;
    }
    let all = data.all_rows();
    for a in 0..=1u8 {
        out.unadjusted[a as usize] = unadjusted_eta_point(&data, &all, a, t, y)?;
        let (km, se) = kaplan_meier_greenwood(&data, &all, a, t)?;
        out.unadjusted[2 + a as usize] = km;
        out.unadjusted_se[2 + a as usize] = se;
    }
    if cfg.plugin {
        let b = provider.fit(&data, &all, seed, Some(y))?;
        let mut p = [0.0; 4];
        for a in 0..=1u8 {
            p[a as usize] = plugin_eta(&b, &data, a, t, y)?;
            let surv = data
                .records()
                .iter()
                .map(|r| Ok(b.event.curve(a, &r.covariates)?.survival(t)))
                .collect::<Result<Vec<f64>>>()?;
            p[2 + a as usize] = stable_mean(&surv);
        }
        out.plugin = Some(p);
    }
    if cfg.wald {
        let s1 = simplex_point(&s[1], &s[3], 1, cfg.level)?;
        let s0 = simplex_point(&s[0], &s[2], 0, cfg.level)?;
        let cc = cross_cov(&s[1], &s[3], &s[0], &s[2])?;
        out.wald_p = Some(wald_equality(&s1, &s0, &cc)?.p_value);
    }
    Ok(out)
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = stable_mean(v);
    let ss: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
    (stable_mean(&ss) * v.len() as f64 / (v.len() - 1) as f64).sqrt()
}

fn summarize(
    estimand: usize,
    method: usize,
    points: &[f64],
    ses: Option<&[f64]>,
    truth: f64,
    level: f64,
    onestep_sd: f64,
) -> McRow {
    let mean = stable_mean(points);
    let sd = sample_sd(points);
    let z = z_crit(level);
    let (se, coverage) = match ses {
        Some(ses) => {
            let hits: Vec<f64> = points
                .iter()
                .zip(ses)
                .map(|(p, s)| ((p - truth).abs() <= z * s) as u8 as f64)
                .collect();
            (Some(stable_mean(ses)), Some(stable_mean(&hits)))
        }
        None => (None, None),
    };
    McRow {
        estimand: ESTIMANDS[estimand].into(),
        method: METHODS[method].into(),
        mean,
        bias: mean - truth,
        se,
        sd,
        se_sd: se.map(|s| s / sd),
        coverage,
        rel_eff: (sd / onestep_sd).powi(2),
    }
}

/// Monte Carlo study of the estimators on `reps` datasets of size `n`.
///
/// Replicate `r` draws from stream `r` of `root`, so the report does not
/// depend on the number of threads.
pub fn run_mc(spec: &ScenarioSpec, n: usize, reps: usize, cfg: &McConfig, root: u64) -> Result<MonteCarloReport> {
    if reps < 2 {
        return Err(Error::Config(format!("reps must be >= 2, got {reps}")));
    }
    if n < 10 {
        return Err(Error::Config(format!("n must be >= 10, got {n}")));
    }
    let mut spec = spec.clone();
    let calibration = spec.calibrate()?;
    let truth = cfg.truth.unwrap_or_else(|| spec.quadrature_truth());
    let work = || -> Vec<Result<ReplicateEstimates>> {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| replicate(&spec, n, cfg, root, r))
            .collect()
    };
    let results = match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut replicates = Vec::with_capacity(reps);
    let mut failures = 0;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => replicates.push(v),
            Err(e) => {
                log::warn!("replicate {r} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures * 100 >= reps || replicates.len() < 2 {
        return Err(Error::Estimation(format!(
            "{failures} of {reps} replicates failed (at most 1% allowed)"
        )));
    }
    let truth_of = |j: usize| match j {
        0 | 1 => truth.eta[j],
        _ => truth.surv[j - 2],
    };
    let mut rows = Vec::new();
    for j in 0..4 {
        let col = |f: &dyn Fn(&ReplicateEstimates) -> f64| -> Vec<f64> { replicates.iter().map(f).collect() };
        let one = col(&|r| r.onestep[j]);
        let one_se = col(&|r| r.onestep_se[j]);
        let one_sd = sample_sd(&one);
        let tj = truth_of(j);
        rows.push(summarize(j, 0, &one, Some(&one_se), tj, cfg.level, one_sd));
        let un = col(&|r| r.unadjusted[j]);
        let un_se = col(&|r| r.unadjusted_se[j]);
        let un_se = (j >= 2).then_some(un_se.as_slice());
        rows.push(summarize(j, 1, &un, un_se, tj, cfg.level, one_sd));
        if cfg.plugin {
            let pl = col(&|r| r.plugin.map_or(f64::NAN, |p| p[j]));
            rows.push(summarize(j, 2, &pl, None, tj, cfg.level, one_sd));
        }
    }
    let wald_rejection = cfg.wald.then(|| {
        let rej: Vec<f64> = replicates
            .iter()
            .map(|r| (r.wald_p.unwrap_or(1.0) < 1.0 - cfg.level) as u8 as f64)
            .collect();
        stable_mean(&rej)
    });
    Ok(MonteCarloReport {
        scenario: spec.name.clone(),
        n,
        reps,
        seed: root,
        failures,
        truth,
        rows,
        wald_rejection,
        floored: replicates.iter().map(|r| r.floored).sum(),
        calibration,
        replicates,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.4}"))
}

impl MonteCarloReport {
    pub fn row(&self, estimand: &str, method: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimand == estimand && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimand,method,mean,bias,se,sd,se_sd,coverage,rel_eff\n");
        for r in &self.rows {
            let o = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.estimand,
                r.method,
                r.mean,
                r.bias,
                o(r.se),
                r.sd,
                o(r.se_sd),
                o(r.coverage),
                r.rel_eff
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{} (n = {}, reps = {}, seed = {}, failures = {})\n",
            self.scenario, self.n, self.reps, self.seed, self.failures
        );
        let _ = writeln!(
            s,
            "{:<8} {:<11} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "", "", "Mean", "Bias", "SE", "SD", "SE/SD", "Coverage", "Rel.eff"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:<11} {:>8.4} {:>8.4} {:>8} {:>8.4} {:>8} {:>8} {:>8.4}",
                r.estimand,
                r.method,
                r.mean,
                r.bias,
                opt(r.se),
                r.sd,
                opt(r.se_sd),
                opt(r.coverage),
                r.rel_eff
            );
        }
        if let Some(w) = self.wald_rejection {
            let _ = writeln!(s, "Wald equality rejection rate: {w:.4}");
        }
        s
    }
}
