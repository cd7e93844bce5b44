//! Bayesian neural-network regression toolkit.
//!
//! Predicts a continuous severity score from high-dimensional feature vectors
//! and compares three model families under a nested cross-validation
//! protocol:
//!
//! - an HMC Bayesian neural network (weight-posterior sampling),
//! - an MC-dropout Bayesian neural network (variational approximation),
//! - a plain early-stopped network as the non-Bayesian baseline.
//!
//! Pipeline: z-score normalization and PCA projection of the features
//! (fitted on training folds only), per-family hyperparameter grid search in
//! the inner CV loop, refit and evaluation on the outer folds, MSE/SMSE
//! metrics, and a paired significance test on squared errors.

pub mod artifact;
pub mod baseline;
pub mod bayes;
pub mod data;
pub mod dropout;
pub mod error;
pub mod eval;
pub mod hmc;
pub mod net;
pub mod optim;
pub mod predictive;
pub mod preprocess;
pub mod seeding;

pub use error::{CsvError, Error, Result};
pub use net::{Activation, Architecture, DesignMatrix, ParamVector};
pub use predictive::PredictiveDistribution;
