//! Nuisance models: propensity, event and censoring hazards, the marker
//! tail among survivors, marker missingness, and a cross-validated selector.

mod bundle;
mod cells;
mod glm;
mod hazard;
mod missingness;
mod outcome;
mod propensity;
mod select;

pub use bundle::{fit_bundle, BundleOptions, LearnerLibrary, NuisanceBundle, SelectedLearners, DEFAULT_FLOOR};
pub use cells::{CellEntry, CellTable};
pub use glm::{fit_binary, BinaryGlm, Link};
pub use hazard::{
    cumhaz_increments, fit_hazard, log_partial_likelihood, predict_survival, HazardFit, HazardSpec, HazardStratum,
    HazardTarget, SubjectCurve, SurvivalForm,
};
pub use missingness::{fit_missingness, MissingnessFit, MissingnessSpec};
pub use outcome::{fit_outcome, OutcomeDesign, OutcomeFit, OutcomePart, OutcomeSpec};
pub use propensity::{fit_propensity, PropensityFit, PropensityKind, PropensitySpec};
pub use select::{
    cv_select, hazard_brier_loss, missingness_loss, outcome_loss, propensity_loss, split_rows, FitContext, Learner,
    LossFn, Selection,
};
