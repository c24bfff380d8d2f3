//! Synthetic partially observable strategy games, their featurization into
//! coarse count grids, rule-based and learned predictors of the hidden state,
//! and the scoring harness that compares them.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fog;
pub mod grid;
pub mod model;
pub mod replay;
pub mod rng;
pub mod sim;
pub mod tech;

pub use error::{Error, Result};
