//! Discrete super learner: pick the candidate with the smallest
//! cross-validated loss and refit it on all rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::hazard::{fit_hazard, HazardFit, HazardSpec, HazardTarget};
use super::missingness::{fit_missingness, MissingnessFit, MissingnessSpec};
use super::outcome::{fit_outcome, outcome_rows, OutcomeFit, OutcomeSpec};
use super::propensity::{fit_propensity, PropensityFit, PropensitySpec};
use crate::data::Dataset;
use crate::error::{estimation, Result};
use crate::numeric::stable_sum;

/// Landmark quantities some learners need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitContext {
    pub t: f64,
    pub y: f64,
    /// Floor for inverse-probability weights inside losses.
    pub floor: f64,
}

/// Anything that can be trained on a subset of rows.
pub trait Learner: Send + Sync {
    type Fit;

    fn name(&self) -> String;

    fn fit(&self, data: &Dataset, rows: &[usize], ctx: &FitContext) -> Result<Self::Fit>;
}

impl<F, T: Learner<Fit = F> + ?Sized> Learner for Box<T> {
    type Fit = F;

    fn name(&self) -> String {
        (**self).name()
    }

    fn fit(&self, data: &Dataset, rows: &[usize], ctx: &FitContext) -> Result<F> {
        (**self).fit(data, rows, ctx)
    }
}

impl Learner for PropensitySpec {
    type Fit = PropensityFit;

    fn name(&self) -> String {
        format!("propensity {self:?}")
    }

    fn fit(&self, data: &Dataset, rows: &[usize], _ctx: &FitContext) -> Result<PropensityFit> {
        fit_propensity(data, rows, self)
    }
}

impl Learner for HazardSpec {
    type Fit = HazardFit;

    fn name(&self) -> String {
        format!(
            "{:?} hazard on {:?} (strata {:?})",
            self.target, self.covariates, self.strata_covariates
        )
    }

    fn fit(&self, data: &Dataset, rows: &[usize], _ctx: &FitContext) -> Result<HazardFit> {
        fit_hazard(data, rows, self)
    }
}

impl Learner for OutcomeSpec {
    type Fit = OutcomeFit;

    fn name(&self) -> String {
        format!("outcome {:?}/{:?}", self.design, self.link)
    }

    fn fit(&self, data: &Dataset, rows: &[usize], ctx: &FitContext) -> Result<OutcomeFit> {
        fit_outcome(data, rows, ctx.t, ctx.y, self)
    }
}

impl Learner for MissingnessSpec {
    type Fit = MissingnessFit;

    fn name(&self) -> String {
        format!("missingness {self:?}")
    }

    fn fit(&self, data: &Dataset, rows: &[usize], ctx: &FitContext) -> Result<MissingnessFit> {
        fit_missingness(data, rows, ctx.t, self)
    }
}

#[derive(Debug, Clone)]
pub struct Selection<F> {
    pub index: usize,
    pub fit: F,
    /// Mean held-out loss per candidate; infinite for failed candidates.
    pub cv_loss: Vec<f64>,
}

/// Total held-out loss of a fit: `(fit, data, train rows, test rows)`.
pub type LossFn<'a, F> = dyn Fn(&F, &Dataset, &[usize], &[usize]) -> Result<f64> + Sync + 'a;

/// Seeded split of `rows` into `k` folds of sizes within one of each other.
pub fn split_rows(rows: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut shuffled = rows.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in shuffled.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Cross-validated choice among `candidates`; ties go to the lower index.
pub fn cv_select<L: Learner>(
    candidates: &[L],
    data: &Dataset,
    rows: &[usize],
    folds: usize,
    seed: u64,
    ctx: &FitContext,
    loss: &LossFn<'_, L::Fit>,
) -> Result<Selection<L::Fit>> {
    match candidates.len() {
        0 => return Err(estimation("learner selection with no candidates")),
        1 => {
            return Ok(Selection {
                index: 0,
                fit: candidates[0].fit(data, rows, ctx)?,
                cv_loss: vec![0.0],
            })
        }
        _ => {}
    }
    if folds < 2 || folds > rows.len() {
        return Err(estimation(format!(
            "learner selection needs 2 <= folds <= n, got {folds} folds for {} rows",
            rows.len()
        )));
    }
    let split = split_rows(rows, folds, seed);
    let trains: Vec<Vec<usize>> = (0..folds)
        .map(|k| {
            let mut tr: Vec<usize> = split
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            tr.sort_unstable();
            tr
        })
        .collect();

    let mut cv_loss = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut per_fold = Vec::with_capacity(folds);
        for (test, train) in split.iter().zip(&trains) {
            let l = cand.fit(data, train, ctx).and_then(|f| loss(&f, data, train, test));
            match l {
                Ok(v) if v.is_finite() => per_fold.push(v),
                Ok(_) => {
                    log::warn!("{}: non-finite held-out loss; excluded", cand.name());
                    per_fold.clear();
                    break;
                }
                Err(e) => {
                    log::warn!("{}: failed on a training fold ({e}); excluded", cand.name());
                    per_fold.clear();
                    break;
                }
            }
        }
        cv_loss.push(if per_fold.len() == folds {
            stable_sum(&per_fold) / rows.len() as f64
        } else {
            f64::INFINITY
        });
    }

    let mut best: Option<usize> = None;
    for (i, &l) in cv_loss.iter().enumerate() {
        if l.is_finite() && best.is_none_or(|b| l < cv_loss[b]) {
            best = Some(i);
        }
    }
    let index = best.ok_or_else(|| estimation("learner selection: every candidate failed"))?;
    Ok(Selection {
        index,
        fit: candidates[index].fit(data, rows, ctx)?,
        cv_loss,
    })
}

fn nll(p: f64, y: bool) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn propensity_loss(fit: &PropensityFit, data: &Dataset, _train: &[usize], test: &[usize]) -> Result<f64> {
    let v: Vec<f64> = test
        .iter()
        .map(|&i| {
            let r = data.get(i);
            nll(fit.predict_raw(&r.covariates), r.treatment == 1)
        })
        .collect();
    Ok(stable_sum(&v))
}

pub fn outcome_loss(t: f64) -> impl Fn(&OutcomeFit, &Dataset, &[usize], &[usize]) -> Result<f64> + Sync {
    move |fit, data, _train, test| {
        let v: Vec<f64> = outcome_rows(data, test, t)
            .into_iter()
            .map(|i| {
                let r = data.get(i);
                let above = r.marker_at(t).is_some_and(|m| m > fit.y);
                nll(fit.predict(r.treatment, &r.covariates), above)
            })
            .collect();
        Ok(stable_sum(&v))
    }
}

pub fn missingness_loss(t: f64) -> impl Fn(&MissingnessFit, &Dataset, &[usize], &[usize]) -> Result<f64> + Sync {
    move |fit, data, _train, test| {
        let v: Vec<f64> = test
            .iter()
            .map(|&i| data.get(i))
            .filter(|r| r.alive_at(t))
            .map(|r| nll(fit.predict_raw(r.treatment, &r.covariates), r.r()))
            .collect();
        Ok(stable_sum(&v))
    }
}

/// Inverse-probability-of-censoring weighted Brier score of the survival
/// function at `t`. For a censoring-hazard fit the roles of the two
/// processes are exchanged. Weights come from arm-stratified Kaplan–Meier
/// fits of the other process on the training rows.
pub fn hazard_brier_loss(
    t: f64,
    floor: f64,
) -> impl Fn(&HazardFit, &Dataset, &[usize], &[usize]) -> Result<f64> + Sync {
    move |fit, data, train, test| {
        let target = fit.target();
        let other = match target {
            HazardTarget::Event => HazardTarget::Censoring,
            HazardTarget::Censoring => HazardTarget::Event,
        };
        let weights = fit_hazard(data, train, &HazardSpec::kaplan_meier(other))?;
        let mut v = Vec::with_capacity(test.len());
        for &i in test {
            let r = data.get(i);
            let pred = fit.curve(r.treatment, &r.covariates)?.survival(t);
            let w = weights.curve(r.treatment, &[])?;
            let own_event = match target {
                HazardTarget::Event => r.event,
                HazardTarget::Censoring => !r.event,
            };
            let term = if r.time > t {
                (1.0 - pred).powi(2) / w.survival(t).max(floor)
            } else if own_event {
                // deaths precede censorings at tied times
                let g = match target {
                    HazardTarget::Event => w.survival_left(r.time),
                    HazardTarget::Censoring => w.survival(r.time),
                };
                pred * pred / g.max(floor)
            } else {
                0.0
            };
            v.push(term);
        }
        Ok(stable_sum(&v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;

    fn toy() -> Dataset {
        let recs = (0..40)
            .map(|i| {
                let x = (i % 5) as f64;
                SubjectRecord::new(i.to_string(), 1.0, true, ((i * 7) % 3 == 0) as u8).with_covariates(vec![x])
            })
            .collect();
        Dataset::new(vec!["x".into()], recs).unwrap()
    }

    const CTX: FitContext = FitContext {
        t: 1.0,
        y: 0.0,
        floor: 0.01,
    };

    #[test]
    fn single_candidate_returned() {
        let d = toy();
        let s = cv_select(
            &[PropensitySpec::InterceptOnly],
            &d,
            &d.all_rows(),
            5,
            1,
            &CTX,
            &propensity_loss,
        )
        .unwrap();
        assert_eq!(s.index, 0);
    }

    #[test]
    fn identical_candidates_tie_to_lower_index() {
        let d = toy();
        let c = [PropensitySpec::MainEffects, PropensitySpec::MainEffects];
        let s = cv_select(&c, &d, &d.all_rows(), 5, 3, &CTX, &propensity_loss).unwrap();
        assert_eq!(s.index, 0);
        assert_eq!(s.cv_loss[0], s.cv_loss[1]);
    }

    #[test]
    fn failing_candidate_is_excluded() {
        let d = toy();
        let c = [PropensitySpec::Known(1.5), PropensitySpec::InterceptOnly];
        let s = cv_select(&c, &d, &d.all_rows(), 4, 3, &CTX, &propensity_loss).unwrap();
        assert_eq!(s.index, 1);
        assert!(s.cv_loss[0].is_infinite());
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let rows: Vec<usize> = (0..1003).collect();
        let a = split_rows(&rows, 5, 9);
        let mut sizes: Vec<usize> = a.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![200, 200, 201, 201, 201]);
        assert_eq!(a, split_rows(&rows, 5, 9));
    }
}
