use serde::{Deserialize, Serialize};

use super::glm::Link;
use super::hazard::{HazardFit, HazardSpec, HazardTarget};
use super::missingness::{MissingnessFit, MissingnessSpec};
use super::outcome::{OutcomeDesign, OutcomeFit, OutcomeSpec};
use super::propensity::{PropensityFit, PropensitySpec};
use super::select::{cv_select, hazard_brier_loss, missingness_loss, outcome_loss, propensity_loss, FitContext};
use crate::data::{Dataset, SubjectRecord};
use crate::error::{estimation, Result};

pub const DEFAULT_FLOOR: f64 = 0.01;

/// Candidate lists per nuisance. A list with one entry is fit directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerLibrary {
    pub propensity: Vec<PropensitySpec>,
    pub event: Vec<HazardSpec>,
    pub censoring: Vec<HazardSpec>,
    pub outcome: Vec<OutcomeSpec>,
    #[serde(default = "default_missingness")]
    pub missingness: Vec<MissingnessSpec>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
}

fn default_missingness() -> Vec<MissingnessSpec> {
    vec![MissingnessSpec::default()]
}

fn default_cv_folds() -> usize {
    5
}

impl LearnerLibrary {
    /// Candidate libraries used when nothing is configured.
    pub fn default_for(dim: usize, known_pi: Option<f64>) -> Self {
        let all: Vec<usize> = (0..dim).collect();
        let propensity = match known_pi {
            Some(p) => vec![PropensitySpec::Known(p)],
            None => vec![PropensitySpec::InterceptOnly, PropensitySpec::MainEffects],
        };
        let hazard = |target| vec![HazardSpec::kaplan_meier(target), HazardSpec::cox(target, all.clone())];
        Self {
            propensity,
            event: hazard(HazardTarget::Event),
            censoring: hazard(HazardTarget::Censoring),
            outcome: vec![
                OutcomeSpec::new(OutcomeDesign::InterceptPerArm, Link::Logit),
                OutcomeSpec::new(OutcomeDesign::MainEffects, Link::Logit),
                OutcomeSpec::new(OutcomeDesign::MainEffects, Link::Probit),
                OutcomeSpec::new(OutcomeDesign::Interaction, Link::Logit),
                OutcomeSpec::new(OutcomeDesign::Interaction, Link::Probit),
            ],
            missingness: default_missingness(),
            cv_folds: default_cv_folds(),
        }
    }

    /// One parametric model per nuisance: main-effects logistic (or known)
    /// propensity, arm-stratified Cox models, per-arm probit outcome.
    pub fn parametric(dim: usize, known_pi: Option<f64>) -> Self {
        let all: Vec<usize> = (0..dim).collect();
        Self {
            propensity: vec![known_pi.map_or(PropensitySpec::MainEffects, PropensitySpec::Known)],
            event: vec![HazardSpec::cox(HazardTarget::Event, all.clone())],
            censoring: vec![HazardSpec::cox(HazardTarget::Censoring, all)],
            outcome: vec![OutcomeSpec::new(OutcomeDesign::Interaction, Link::Probit)],
            missingness: default_missingness(),
            cv_folds: default_cv_folds(),
        }
    }

    /// Covariate-free nuisances: arm shares, arm-wise Kaplan–Meier and
    /// per-arm proportions.
    pub fn covariate_free(known_pi: Option<f64>) -> Self {
        Self {
            propensity: vec![known_pi.map_or(PropensitySpec::InterceptOnly, PropensitySpec::Known)],
            event: vec![HazardSpec::kaplan_meier(HazardTarget::Event)],
            censoring: vec![HazardSpec::kaplan_meier(HazardTarget::Censoring)],
            outcome: vec![OutcomeSpec::new(OutcomeDesign::InterceptPerArm, Link::Logit)],
            missingness: vec![MissingnessSpec {
                include_treatment: true,
                covariates: Some(Vec::new()),
            }],
            cv_folds: default_cv_folds(),
        }
    }

    /// Saturated nuisances on discrete covariate columns.
    pub fn saturated(columns: &[usize]) -> Self {
        let cells = |target| HazardSpec {
            strata_covariates: columns.to_vec(),
            ..HazardSpec::kaplan_meier(target)
        };
        Self {
            propensity: vec![PropensitySpec::Cells(columns.to_vec())],
            event: vec![cells(HazardTarget::Event)],
            censoring: vec![cells(HazardTarget::Censoring)],
            outcome: vec![OutcomeSpec {
                covariates: Some(columns.to_vec()),
                ..OutcomeSpec::new(OutcomeDesign::Cells, Link::Logit)
            }],
            missingness: default_missingness(),
            cv_folds: default_cv_folds(),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        let bad = |c: &[usize]| c.iter().any(|&j| j >= dim);
        let hazard_bad = |h: &HazardSpec| bad(&h.covariates) || bad(&h.strata_covariates);
        if self.propensity.iter().any(|p| match p {
            PropensitySpec::Covariates(c) | PropensitySpec::Cells(c) => bad(c),
            _ => false,
        }) || self.event.iter().any(hazard_bad)
            || self.censoring.iter().any(hazard_bad)
            || self.outcome.iter().any(|o| o.covariates.as_deref().is_some_and(bad))
            || self
                .missingness
                .iter()
                .any(|m| m.covariates.as_deref().is_some_and(bad))
        {
            return Err(crate::error::Error::Config(format!(
                "learner library refers to a covariate column beyond the {dim} available"
            )));
        }
        if self.event.iter().any(|h| h.target != HazardTarget::Event)
            || self.censoring.iter().any(|h| h.target != HazardTarget::Censoring)
        {
            return Err(crate::error::Error::Config(
                "hazard learner listed under the wrong target".into(),
            ));
        }
        Ok(())
    }
}

/// Which candidate each nuisance selected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectedLearners {
    pub propensity: usize,
    pub event: usize,
    pub censoring: usize,
    pub outcome: Option<usize>,
    pub missingness: Option<usize>,
}

/// Fitted, evaluable nuisances. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceBundle {
    pub propensity: PropensityFit,
    pub event: HazardFit,
    pub censoring: HazardFit,
    /// `G(y | A, L)` at one threshold; absent for survival-only bundles.
    pub outcome: Option<OutcomeFit>,
    pub missingness: Option<MissingnessFit>,
    pub floor: f64,
    pub t: f64,
    pub selected: SelectedLearners,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleOptions {
    pub t: f64,
    /// Threshold for the outcome model; `None` skips it.
    pub y: Option<f64>,
    pub floor: f64,
    pub seed: u64,
    pub mar: bool,
}

impl BundleOptions {
    pub fn new(t: f64, y: Option<f64>) -> Self {
        Self {
            t,
            y,
            floor: DEFAULT_FLOOR,
            seed: 0,
            mar: false,
        }
    }
}

impl NuisanceBundle {
    /// Clipped `P(A = a | l)`.
    pub fn arm_prob(&self, a: u8, l: &[f64]) -> f64 {
        self.propensity.arm_prob(a, l, self.floor)
    }

    pub fn outcome_at(&self, y: f64) -> Result<&OutcomeFit> {
        match &self.outcome {
            Some(o) if o.y == y => Ok(o),
            Some(o) => Err(estimation(format!(
                "nuisance bundle outcome model was fit at y = {}, requested y = {y}",
                o.y
            ))),
            None => Err(estimation("nuisance bundle has no outcome model")),
        }
    }

    /// `Q_y(a, l) = G(y | a, l) S(t | a, l)` with raw (unfloored) values.
    pub fn q(&self, a: u8, l: &[f64], y: f64) -> Result<f64> {
        Ok(self.outcome_at(y)?.predict(a, l) * self.event.curve(a, l)?.survival(self.t))
    }

    /// Every prediction the estimators use is finite and a probability for
    /// each of `rows`.
    pub fn validate(&self, data: &Dataset, rows: &[usize]) -> Result<()> {
        for &i in rows {
            let r: &SubjectRecord = data.get(i);
            for a in 0..=1u8 {
                let l = &r.covariates;
                let pi = self.propensity.predict_raw(l);
                let s = self.event.curve(a, l)?.survival(self.t);
                let k = self.censoring.curve(a, l)?.survival(self.t);
                let g = self.outcome.as_ref().map_or(0.5, |o| o.predict(a, l));
                for (what, v) in [
                    ("propensity", pi),
                    ("survival", s),
                    ("censoring survival", k),
                    ("outcome", g),
                ] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(estimation(format!(
                            "{what} prediction {v} for subject {:?} (arm {a}) is not a probability",
                            r.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Replaces the outcome model with one fit at threshold `y`.
    pub fn refit_outcome(
        &self,
        data: &Dataset,
        rows: &[usize],
        library: &LearnerLibrary,
        y: f64,
        seed: u64,
    ) -> Result<NuisanceBundle> {
        let ctx = FitContext {
            t: self.t,
            y,
            floor: self.floor,
        };
        let sel = cv_select(
            &library.outcome,
            data,
            rows,
            library.cv_folds,
            seed,
            &ctx,
            &outcome_loss(self.t),
        )?;
        let mut b = self.clone();
        b.outcome = Some(sel.fit);
        b.selected.outcome = Some(sel.index);
        Ok(b)
    }
}

/// Fits every nuisance on `rows`, selecting among candidates by
/// cross-validation where a list has several.
pub fn fit_bundle(
    data: &Dataset,
    rows: &[usize],
    library: &LearnerLibrary,
    opts: &BundleOptions,
) -> Result<NuisanceBundle> {
    library.check(data.dim())?;
    if !(opts.floor > 0.0 && opts.floor < 0.5) {
        return Err(crate::error::Error::Config(format!(
            "positivity floor must lie in (0, 0.5), got {}",
            opts.floor
        )));
    }
    let ctx = FitContext {
        t: opts.t,
        y: opts.y.unwrap_or(f64::NAN),
        floor: opts.floor,
    };
    let k = library.cv_folds;
    let seed = opts.seed;
    let propensity = cv_select(&library.propensity, data, rows, k, seed, &ctx, &propensity_loss)?;
    let brier = hazard_brier_loss(opts.t, opts.floor);
    let event = cv_select(&library.event, data, rows, k, seed, &ctx, &brier)?;
    let censoring = cv_select(&library.censoring, data, rows, k, seed, &ctx, &brier)?;
    let outcome = match opts.y {
        Some(_) => Some(cv_select(
            &library.outcome,
            data,
            rows,
            k,
            seed,
            &ctx,
            &outcome_loss(opts.t),
        )?),
        None => None,
    };
    let missingness = if opts.mar {
        Some(cv_select(
            &library.missingness,
            data,
            rows,
            k,
            seed,
            &ctx,
            &missingness_loss(opts.t),
        )?)
    } else {
        None
    };
    let selected = SelectedLearners {
        propensity: propensity.index,
        event: event.index,
        censoring: censoring.index,
        outcome: outcome.as_ref().map(|s| s.index),
        missingness: missingness.as_ref().map(|s| s.index),
    };
    let propensity = if library.propensity.len() > 1 {
        propensity.fit.mark_selected()
    } else {
        propensity.fit
    };
    Ok(NuisanceBundle {
        propensity,
        event: event.fit,
        censoring: censoring.fit,
        outcome: outcome.map(|s| s.fit),
        missingness: missingness.map(|s| s.fit),
        floor: opts.floor,
        t: opts.t,
        selected,
    })
}
