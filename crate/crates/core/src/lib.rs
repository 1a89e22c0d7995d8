//! Decision-focused portfolio optimization.
//!
//! Linear return predictors are trained against the SPO+ surrogate of
//! decision regret, with the downstream allocation solved by fee-aware,
//! ridge-regularized or robust decision oracles over the long-only simplex.
//! The crate also carries the baselines (predict-then-optimize, mean-variance
//! maximum Sharpe, softmax allocators), a rolling-window monthly backtester
//! and the reporting used to compare them.

pub mod backtest;
pub mod commands;
pub mod config;
pub mod error;
pub mod features;
pub mod market_data;
pub mod metrics;
pub mod softmax_dfl;
pub mod solvers;
pub mod spo;
pub mod training;

pub use error::{Error, Result};
