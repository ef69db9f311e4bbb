//! Bayesian sparse polynomial-chaos surrogates, Bayesian optimal design of
//! experiments, and evidence-based validation of competing models.

pub mod adapters;
pub mod bayesval;
pub mod error;
pub mod errormodel;
pub mod inputspace;
pub mod polybasis;
pub mod predictor;
pub mod rng;
pub mod seqdesign;
pub mod sparsebayes;
pub mod surrogate;

pub use error::{Error, Result};
