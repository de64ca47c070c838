//! Bayesian model checking with joint posterior predictive p-values.
//!
//! The crate estimates posterior predictive, sampled, joint, sampled-joint,
//! calibrated and partial predictive p-values by Monte Carlo, computes the
//! frequency bound of a joint p-value from an estimated CDF of conditional
//! joint exceedance probabilities, and provides copula tools for studying how
//! the bound behaves as statistics are added.

pub mod calibration;
pub mod cli;
pub mod copula;
pub mod dominance;
pub mod ecdf;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod frequency_bound;
pub mod model;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use seed::{SeedSpec, SimRng};
