//! Simulation and estimation toolkit for sibling-comparison designs.
//!
//! Sibling pairs share family-level confounding; comparing an exposed sibling
//! to an unexposed cosibling removes it, at the price of conditioning on
//! exposure discordance and entangling the cosibling's exposure effect with
//! the treatment effect. This crate provides:
//!
//! - a confounded sibling-pair data generator with stored counterfactual
//!   state ([`dgp`]),
//! - the matched (conditional OLS) and between-within random-intercept
//!   estimators of the within-family effect ([`estimators`]),
//! - inverse-probability weighting toward family-level intervention
//!   contrasts, including a selection-weighted variant ([`weighting`]),
//! - a two-period cross-over simulator demonstrating how carry-over aliases
//!   with interference ([`crossover`]),
//! - a Monte Carlo study harness with cluster bootstrap ([`harness`]), and
//! - a classic matched-cohort ATT consistency check ([`matching`]).
//!
//! All randomness flows through seeded, per-entity substreams ([`rng`]), so
//! every result is bit-reproducible at any worker count.

pub mod crossover;
pub mod data;
pub mod dgp;
pub mod estimators;
pub mod harness;
pub mod matching;
pub mod rng;
pub mod weighting;

pub use data::{
    validate_dataset, discordant_subset, Dataset, DgpParams, Diagnostics, FamilyRecord,
    Finding, FitResult, LatentState, MissingReason, ValidationReport,
};
pub use estimators::{AlphaConvention, BwFit, LogisticFit};
pub use weighting::{Normalization, TruncationRule, WeightSet, WeightSource};

/// Errors for dataset and configuration I/O. Estimation routines never fail
/// with `Error`; they return missing results with a recorded reason instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
