//! Bayesian factor-model portfolio allocation with multi-source information
//! fusion.
//!
//! The crate is organized as a chain: Gaussian estimates ([`gaussian`]) are
//! combined across sources ([`fusion`]), pushed through a linear factor model
//! into predictive asset-return distributions ([`blapt`]), and converted into
//! transaction-cost-aware portfolio weights ([`portfolio`]). Around the chain
//! sit [`views`] (time-series view generation with uncertainty decomposition),
//! [`market`] (a synthetic factor-market generator), [`backtest`] (a rolling
//! rebalance harness), and [`metrics`] (performance and significance
//! statistics).

pub mod backtest;
pub mod blapt;
pub mod error;
pub mod fsio;
pub mod fusion;
pub mod gaussian;
pub mod linalg;
pub mod market;
pub mod metrics;
pub mod optim;
pub mod portfolio;
pub mod seeding;
pub mod views;

pub use error::{Error, ErrorCategory, Result};
pub use gaussian::GaussianEstimate;
