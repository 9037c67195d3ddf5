//! Solvers for group distributionally robust optimization: learn one model
//! that minimizes the maximum expected loss over several distributions.
//!
//! The library covers the saddle-point formulation end to end -- mirror-map
//! geometry for the ball and the simplex, stochastic gradient estimators,
//! four fixed-horizon solvers plus a single-sample baseline, duality-gap
//! evaluation, and synthetic / grouped-CSV data handling. The `gdro` CLI
//! crate wraps this into a config-driven experiment runner.

pub mod data;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod geometry;
pub mod problem;
pub mod solvers;

pub use error::{Error, Result};
pub use geometry::{EuclideanBallDomain, ModelPoint, SimplexDomain, SimplexWeights};
pub use problem::{DistributionOracle, Example, GdroInstance, LossModel};
pub use solvers::{Algorithm, ScaleFactors, SolverConfig, SolverTrace, TraceCheckpoint};
