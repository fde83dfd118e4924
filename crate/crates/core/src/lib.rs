//! Debiased estimation of the joint probability of surviving a landmark
//! time with a marker above a threshold.

pub mod config;
pub mod crossfit;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod nuisance;
pub mod numeric;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
