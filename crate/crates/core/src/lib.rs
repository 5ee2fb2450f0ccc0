//! Sensor-placement engine on a synthetic non-stationary environment.
//!
//! The crate provides:
//! - dense and low-rank multivariate-Gaussian algebra ([`gaussian`]),
//! - a synthetic ground-truth environment and task sampler ([`tasks`],
//!   [`environment`]),
//! - exact GP baselines with EQ, RQ and Gibbs kernels ([`kernels`], [`gp`]),
//! - a convolutional Gaussian neural process with hand-written reverse-mode
//!   gradients ([`np`]),
//! - evaluation metrics and calibration diagnostics ([`metrics`]),
//! - acquisition functions, greedy placement, oracle-correlation analysis
//!   and Pareto ranking ([`placement`]),
//! - experiment orchestration, config parsing and artifact emission
//!   ([`experiments`], [`config`], [`container`], [`report`]).

pub mod adam;
pub mod config;
pub mod container;
pub mod environment;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod gp;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod np;
pub mod placement;
pub mod report;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
