//! Model-based demand-response control for a heat pump.
//!
//! The crate bundles a surrogate building simulator, a learned thermal
//! forecaster with a physics-regularized latent, Monte Carlo tree search
//! planners (uninformed and prior-guided), rule-based baselines, scenario
//! generation and an experiment harness.

pub mod baselines;
pub mod domain;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod parallel;
pub mod physnet;
pub mod planner;
pub mod reward;
pub mod scenario;

pub use error::{Error, Result};
