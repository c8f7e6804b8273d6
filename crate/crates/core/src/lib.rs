//! Bayesian dynamic borrowing for two-arm binary-endpoint trials that draw on
//! an external randomized trial and a treatment-only real-world cohort.
//!
//! The pipeline stratifies all sources on a multinomial-logit propensity
//! score, fits a hierarchical model per stratum, combines the stratum
//! posteriors with equivalence-probability weights into a composite prior,
//! approximates it with a Beta mixture and robustifies it with a vague
//! component whose weight is the smallest that keeps the hybrid posterior
//! consistent with the current data.

pub mod comparators;
pub mod data;
pub mod eqps;
pub mod error;
pub mod exec;
pub mod hierarchy;
pub mod mixture;
pub mod numerics;
pub mod propensity;
pub mod simulation;

pub use error::{Error, Result};
