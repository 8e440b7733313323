//! Source-free Newton unlearning for L2-regularized linear classifiers.

pub mod baselines;
pub mod data;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod linalg;
pub mod losses;
pub mod mixed_linear;
pub mod synthetic;
pub mod trainer;
pub mod unlearner;

pub use error::{Error, Result};
