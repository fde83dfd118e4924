//! Analysis settings and the versioned TOML config file.
//!
//! Precedence is defaults < config file < explicit overrides (CLI flags).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MissingnessMode;
use crate::error::{Error, Result};
use crate::nuisance::{BundleOptions, LearnerLibrary, DEFAULT_FLOOR};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub landmark_t: f64,
    /// One threshold or a strictly increasing grid.
    pub threshold_y: Vec<f64>,
    /// Cross-fitting folds; 1 fits nuisances on the full sample.
    pub folds: usize,
    pub seed: u64,
    pub positivity_floor: f64,
    pub known_randomization_prob: Option<f64>,
    pub utility_weight: Option<f64>,
    /// `None` uses [`LearnerLibrary::default_for`].
    pub learner_library: Option<LearnerLibrary>,
    pub missingness_mode: MissingnessMode,
    pub level: f64,
}

impl AnalysisConfig {
    pub fn new(landmark_t: f64, threshold_y: f64) -> Self {
        Self {
            landmark_t,
            threshold_y: vec![threshold_y],
            folds: 5,
            seed: 20240521,
            positivity_floor: DEFAULT_FLOOR,
            known_randomization_prob: None,
            utility_weight: None,
            learner_library: None,
            missingness_mode: MissingnessMode::None,
            level: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.landmark_t > 0.0 && self.landmark_t.is_finite()) {
            return bad(format!("landmark t must be positive, got {}", self.landmark_t));
        }
        if self.threshold_y.is_empty() || self.threshold_y.iter().any(|y| !y.is_finite()) {
            return bad("threshold y must be one or more finite values".into());
        }
        if self.threshold_y.windows(2).any(|w| w[0] >= w[1]) {
            return bad("threshold grid must be strictly increasing".into());
        }
        if self.folds == 0 {
            return bad("folds must be >= 1".into());
        }
        if !(self.positivity_floor > 0.0 && self.positivity_floor < 0.5) {
            return bad(format!(
                "positivity floor must lie in (0, 0.5), got {}",
                self.positivity_floor
            ));
        }
        if let Some(p) = self.known_randomization_prob {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("known randomization probability must lie in (0, 1), got {p}"));
            }
        }
        if let Some(w) = self.utility_weight {
            if !(w > 0.0 && w < 1.0) {
                return bad(format!("utility weight must lie in (0, 1), got {w}"));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("confidence level must lie in (0, 1), got {}", self.level));
        }
        Ok(())
    }

    pub fn library(&self, dim: usize) -> LearnerLibrary {
        self.learner_library
            .clone()
            .unwrap_or_else(|| LearnerLibrary::default_for(dim, self.known_randomization_prob))
    }

    pub fn bundle_options(&self, y: Option<f64>) -> BundleOptions {
        BundleOptions {
            t: self.landmark_t,
            y,
            floor: self.positivity_floor,
            seed: self.seed,
            mar: self.missingness_mode == MissingnessMode::Mar,
        }
    }
}

/// `[analysis]` section: every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub t: Option<f64>,
    pub y: Option<Vec<f64>>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub positivity_floor: Option<f64>,
    pub known_randomization_prob: Option<f64>,
    pub utility_weight: Option<f64>,
    pub missingness: Option<MissingnessMode>,
    pub level: Option<f64>,
}

/// The whole config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default)]
    pub analysis: AnalysisSection,
    pub learners: Option<LearnerLibrary>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Layers this file's `[analysis]` values over `base`, then `flags` over
    /// the result.
    pub fn merge(&self, base: AnalysisConfig, flags: &AnalysisSection) -> AnalysisConfig {
        let mut c = apply(base, &self.analysis);
        if self.learners.is_some() {
            c.learner_library = self.learners.clone();
        }
        c = apply(c, flags);
        c
    }
}

/// Overwrites the fields present in `s`.
pub fn apply(mut c: AnalysisConfig, s: &AnalysisSection) -> AnalysisConfig {
    if let Some(v) = s.t {
        c.landmark_t = v;
    }
    if let Some(v) = &s.y {
        c.threshold_y = v.clone();
    }
    if let Some(v) = s.folds {
        c.folds = v;
    }
    if let Some(v) = s.seed {
        c.seed = v;
    }
    if let Some(v) = s.positivity_floor {
        c.positivity_floor = v;
    }
    if s.known_randomization_prob.is_some() {
        c.known_randomization_prob = s.known_randomization_prob;
    }
    if s.utility_weight.is_some() {
        c.utility_weight = s.utility_weight;
    }
    if let Some(v) = s.missingness {
        c.missingness_mode = v;
    }
    if let Some(v) = s.level {
        c.level = v;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigFile::parse("version = 1\n[analysis]\nt = 730.0\ny = [40.0, 45.0]\nfolds = 3\nlevel = 0.9\n")
            .unwrap();
        let flags = AnalysisSection {
            folds: Some(2),
            ..Default::default()
        };
        let c = file.merge(AnalysisConfig::new(1.0, 0.0), &flags);
        assert_eq!(c.landmark_t, 730.0);
        assert_eq!(c.threshold_y, vec![40.0, 45.0]);
        assert_eq!(c.folds, 2);
        assert_eq!(c.level, 0.9);
        c.validate().unwrap();
    }

    #[test]
    fn wrong_version_rejected() {
        assert!(ConfigFile::parse("version = 7\n").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ConfigFile::parse("version = 1\n[analysis]\nthreshold = 3\n").is_err());
    }

    #[test]
    fn learners_round_trip() {
        let file = ConfigFile {
            version: 1,
            analysis: AnalysisSection::default(),
            learners: Some(LearnerLibrary::default_for(2, None)),
        };
        assert_eq!(ConfigFile::parse(&file.to_toml()).unwrap(), file);
    }

    #[test]
    fn invalid_settings() {
        let mut c = AnalysisConfig::new(2.0, 45.0);
        c.threshold_y = vec![3.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = AnalysisConfig::new(2.0, 45.0);
        c.positivity_floor = 0.0;
        assert!(c.validate().is_err());
        assert!(AnalysisConfig::new(0.0, 1.0).validate().is_err());
    }
}
