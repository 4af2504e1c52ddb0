//! Bayesian optimization with Gaussian-process surrogates and a
//! multiscale-graph-correlation (MGC) acquisition function.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernel`]: Matérn-5/2 kernel, its spectral density and random cosine features.
//! - [`gp`]: exact GP prediction, marginal-likelihood fitting and posterior function draws.
//! - [`stats`]: distance correlation and multiscale graph correlation of scalar pairs.
//! - [`cmaes`]: a box-constrained CMA-ES maximizer with IPOP restarts.
//! - [`acquisition`]: GP-MGC together with the random, EI, GP-UCB, MES and GP-DC baselines.
//! - [`benchmarks`]: synthetic test functions with known maxima and a multistart oracle.
//! - [`harness`]: the experiment loop, regret bookkeeping, result files and external objectives.

pub mod acquisition;
pub mod benchmarks;
pub mod cmaes;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kernel;
pub mod stats;

pub use error::{Error, Result};
