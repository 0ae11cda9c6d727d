//! Generalized ratio estimators for discrete energy-based models.
//!
//! Maximum likelihood, pseudolikelihood, ratio matching and generalized
//! score matching are instances of one criterion built from probability
//! ratios over neighborhoods of each data case. On sample spaces small
//! enough to enumerate, this crate evaluates those criteria and their
//! exact derivatives, computes the asymptotic (sandwich) covariance of each
//! estimator, and compares estimators through positive-definite ordering
//! and log-determinant gaps.

pub mod asymptotics;
pub mod cli;
pub mod configspace;
pub mod efficiency;
pub mod error;
pub mod estimators;
pub mod fitting;
pub mod io;
pub mod models;
pub mod par;
pub mod rng;
pub mod simulation;

pub use configspace::{Configuration, Neighborhood};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, EstimatorSpec, TransferFunction};
pub use models::{Dataset, Energy, EnergyModel, ExactDistribution, ParameterVector, ProbabilityTable};
