//! Bayesian feature selection in spatially varying coefficient models with
//! thresholded multiscale Gaussian process (TMGP) priors.

pub mod baselines;
pub mod bench;
pub mod csvio;
pub mod elicitation;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod mcmc;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod points;
pub mod tmgp;

pub use error::{Error, Result};
pub use points::Points;
