//! Risk-averse conditioning on finite scenario ensembles.
//!
//! The crate computes the minimizer of a mean-squared-error / risk trade-off
//! over estimators measurable with respect to a partition and constrained to a
//! feature set, and uses it to value derivative payoffs risk-aversely.
//!
//! - [`scenario`]: scenario spaces, random vectors, expectations and conditional expectations.
//! - [`risk`]: the quadratic risk measure, utility operators and Moreau extensions.
//! - [`featureset`]: feature-set projections and Dykstra's method.
//! - [`solver`]: forward-backward splitting, λ sweeps and brute-force oracles.
//! - [`valuation`]: Black-Scholes ensembles and valuation reports.
//! - [`sparsity`]: probably-sparse spaces and sparse conditional expectations.
//! - [`cli`]: configuration and the batch front-end.

pub mod cli;
pub mod error;
pub mod featureset;
pub mod risk;
pub mod scenario;
pub mod solver;
pub mod sparsity;
pub mod validate;
pub mod valuation;

pub use error::{Error, Result};
pub use scenario::{Measure, Partition, RandomVector, ScenarioSpace};
