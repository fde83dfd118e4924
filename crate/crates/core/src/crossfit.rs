//! K-fold cross-fitting: nuisances fit on each fold's complement evaluate
//! the held-out subjects.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AnalysisConfig;
use crate::data::{check_markers_available, Dataset, MissingnessMode};
use crate::error::{estimation, validation, Result};
use crate::estimators::{eta_contributions, eta_label, surv_contributions, surv_label, EifSample};
use crate::nuisance::{fit_bundle, BundleOptions, LearnerLibrary, NuisanceBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratify {
    None,
    /// Balance the (treatment, Δ_t) cells across folds.
    TreatmentDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n: usize,
    pub k: usize,
    pub fold_of: Vec<usize>,
    pub seed: u64,
    pub strata_key: Option<Vec<String>>,
}

impl FoldAssignment {
    /// Held-out rows of fold `f`, ascending.
    pub fn test_rows(&self, f: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] == f).collect()
    }

    /// Training rows of fold `f`, ascending.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_of[i] != f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }

    /// Writes `id,fold` rows for reproducibility audits.
    pub fn write_csv<W: Write>(&self, data: &Dataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "fold"])?;
        for (r, f) in data.records().iter().zip(&self.fold_of) {
            w.write_record([r.id.as_str(), &f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Seeded fold assignment with sizes within one of `n / k`.
pub fn make_folds(data: &Dataset, k: usize, seed: u64, stratify: Stratify, t: f64) -> Result<FoldAssignment> {
    let n = data.len();
    if k < 2 {
        return Err(validation(format!("cross-fitting needs at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(validation(format!("{k} folds requested for {n} subjects")));
    }
    let key = |i: usize| {
        let r = data.get(i);
        let delta = r.alive_at(t) || r.event;
        format!("A={},delta_t={}", r.treatment, delta as u8)
    };
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut stratified = stratify == Stratify::TreatmentDelta;
    if stratified {
        for i in 0..n {
            strata.entry(key(i)).or_default().push(i);
        }
        if let Some((name, members)) = strata.iter().find(|(_, m)| m.len() < k) {
            log::warn!(
                "fold stratum {name} has {} < {k} members; using unstratified folds",
                members.len()
            );
            stratified = false;
        }
    }
    if !stratified {
        strata.clear();
        strata.insert(String::new(), (0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; n];
    let mut offset = 0;
    for members in strata.values() {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        for (pos, i) in m.into_iter().enumerate() {
            fold_of[i] = (offset + pos) % k;
        }
        offset = (offset + members.len()) % k;
    }
    Ok(FoldAssignment {
        n,
        k,
        fold_of,
        seed,
        strata_key: stratified.then(|| (0..n).map(key).collect()),
    })
}

/// A target of one-step estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Estimand {
    Eta { a: u8, y: f64 },
    Surv { a: u8, u: f64 },
}

impl Estimand {
    pub fn label(&self, t: f64) -> String {
        match *self {
            Estimand::Eta { a, y } => eta_label(a, t, y),
            Estimand::Surv { a, u } => surv_label(a, u),
        }
    }
}

/// Produces nuisance bundles from training rows.
pub trait BundleProvider: Sync {
    /// Fits a bundle on `train`; `y` selects the outcome threshold.
    fn fit(&self, data: &Dataset, train: &[usize], seed: u64, y: Option<f64>) -> Result<NuisanceBundle>;

    /// The same bundle with its outcome model refit at `y`.
    fn refit_outcome(
        &self,
        _bundle: &NuisanceBundle,
        data: &Dataset,
        train: &[usize],
        seed: u64,
        y: f64,
    ) -> Result<NuisanceBundle> {
        self.fit(data, train, seed, Some(y))
    }
}

/// Fits bundles from a learner library.
#[derive(Debug, Clone)]
pub struct LibraryProvider {
    pub library: LearnerLibrary,
    pub t: f64,
    pub floor: f64,
    pub mar: bool,
}

impl LibraryProvider {
    pub fn from_config(config: &AnalysisConfig, dim: usize) -> Self {
        Self {
            library: config.library(dim),
            t: config.landmark_t,
            floor: config.positivity_floor,
            mar: config.missingness_mode == MissingnessMode::Mar,
        }
    }
}

impl BundleProvider for LibraryProvider {
    fn fit(&self, data: &Dataset, train: &[usize], seed: u64, y: Option<f64>) -> Result<NuisanceBundle> {
        let opts = BundleOptions {
            t: self.t,
            y,
            floor: self.floor,
            seed,
            mar: self.mar,
        };
        fit_bundle(data, train, &self.library, &opts)
    }

    fn refit_outcome(
        &self,
        bundle: &NuisanceBundle,
        data: &Dataset,
        train: &[usize],
        seed: u64,
        y: f64,
    ) -> Result<NuisanceBundle> {
        bundle.refit_outcome(data, train, &self.library, y, seed)
    }
}

impl<F> BundleProvider for F
where
    F: Fn(&Dataset, &[usize], u64, Option<f64>) -> Result<NuisanceBundle> + Sync,
{
    fn fit(&self, data: &Dataset, train: &[usize], seed: u64, y: Option<f64>) -> Result<NuisanceBundle> {
        self(data, train, seed, y)
    }
}

/// Seed for the inner selection of a fold, from the run seed and the
/// smallest held-out row: relabeling folds changes nothing.
pub fn fold_seed(seed: u64, min_row: usize) -> u64 {
    let mut z = seed ^ (min_row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn distinct_ys(estimands: &[Estimand]) -> Vec<f64> {
    let mut ys: Vec<f64> = estimands
        .iter()
        .filter_map(|e| match e {
            Estimand::Eta { y, .. } => Some(*y),
            Estimand::Surv { .. } => None,
        })
        .collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    ys
}

/// Contributions of `rows` to every estimand, from bundles fit on `train`.
fn evaluate_block(
    provider: &dyn BundleProvider,
    data: &Dataset,
    train: &[usize],
    rows: &[usize],
    seed: u64,
    t: f64,
    mar: bool,
    estimands: &[Estimand],
) -> Result<Vec<(Vec<f64>, usize)>> {
    let ys = distinct_ys(estimands);
    let base = provider.fit(data, train, seed, ys.first().copied())?;
    let mut bundles = vec![base];
    for &y in ys.iter().skip(1) {
        let b = provider.refit_outcome(&bundles[0], data, train, seed, y)?;
        bundles.push(b);
    }
    estimands
        .iter()
        .map(|e| match *e {
            Estimand::Eta { a, y } => {
                let b = &bundles[ys.iter().position(|&v| v == y).expect("threshold collected above")];
                eta_contributions(b, data, rows, a, t, y, mar)
            }
            Estimand::Surv { a, u } => surv_contributions(&bundles[0], data, rows, a, u),
        })
        .collect()
}

/// One-step estimates of several estimands sharing fold-wise nuisances.
///
/// With `folds == 1` the nuisances are fit on all subjects and evaluated
/// on the same subjects.
pub fn crossfit_many(
    data: &Dataset,
    provider: &dyn BundleProvider,
    folds: usize,
    seed: u64,
    t: f64,
    mar: bool,
    estimands: &[Estimand],
) -> Result<Vec<EifSample>> {
    let mode = if mar {
        MissingnessMode::Mar
    } else {
        MissingnessMode::None
    };
    if estimands.iter().any(|e| matches!(e, Estimand::Eta { .. })) {
        check_markers_available(data, t, mode)?;
    }
    let all = data.all_rows();
    if folds <= 1 {
        let parts = evaluate_block(provider, data, &all, &all, seed, t, mar, estimands)?;
        return estimands
            .iter()
            .zip(parts)
            .map(|(e, (psi, c))| EifSample::from_contributions(e.label(t), psi, c))
            .collect();
    }
    let assignment = make_folds(data, folds, seed, Stratify::TreatmentDelta, t)?;
    crossfit_with_folds(data, provider, &assignment, seed, t, mar, estimands)
}

/// Cross-fitting over a given fold assignment.
pub fn crossfit_with_folds(
    data: &Dataset,
    provider: &dyn BundleProvider,
    assignment: &FoldAssignment,
    seed: u64,
    t: f64,
    mar: bool,
    estimands: &[Estimand],
) -> Result<Vec<EifSample>> {
    if assignment.n != data.len() {
        return Err(validation("fold assignment does not match the dataset size"));
    }
    let folds = assignment.k;
    if assignment.sizes().contains(&0) {
        return Err(validation("fold assignment has an empty fold"));
    }
    let per_fold: Vec<Result<(Vec<usize>, Vec<(Vec<f64>, usize)>)>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let test = assignment.test_rows(f);
            let train = assignment.train_rows(f);
            debug_assert!(test.iter().all(|i| train.binary_search(i).is_err()));
            let s = fold_seed(seed, test[0]);
            evaluate_block(provider, data, &train, &test, s, t, mar, estimands)
                .map(|p| (test, p))
                .map_err(|e| estimation(format!("fold {}: {e}", f + 1)))
        })
        .collect();
    let mut psi = vec![vec![0.0; data.len()]; estimands.len()];
    let mut floored = vec![0; estimands.len()];
    for r in per_fold {
        let (test, parts) = r?;
        for (j, (vals, c)) in parts.into_iter().enumerate() {
            for (&i, v) in test.iter().zip(vals) {
                psi[j][i] = v;
            }
            floored[j] += c;
        }
    }
    estimands
        .iter()
        .zip(psi)
        .zip(floored)
        .map(|((e, p), c)| EifSample::from_contributions(e.label(t), p, c))
        .collect()
}

/// Cross-fitted one-step estimate of one estimand under `config`.
pub fn crossfit_onestep(data: &Dataset, config: &AnalysisConfig, estimand: Estimand) -> Result<EifSample> {
    config.validate()?;
    let provider = LibraryProvider::from_config(config, data.dim());
    let mar = config.missingness_mode == MissingnessMode::Mar;
    let mut out = crossfit_many(
        data,
        &provider,
        config.folds,
        config.seed,
        config.landmark_t,
        mar,
        &[estimand],
    )?;
    Ok(out.remove(0))
}
