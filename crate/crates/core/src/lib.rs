//! Factored policy gradients: influence networks, minimum policy
//! factorisation, factor baselines and the bandit testbeds used to study
//! their effect on estimator variance.

pub mod bandit;
pub mod error;
pub mod estimator;
pub mod graph;
pub mod policy;
pub mod stats;
pub mod trainer;
pub mod variance;

pub use error::{Error, Result};
