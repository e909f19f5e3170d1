//! Cross-asset drawdown-risk forecasting.
//!
//! The crate is organised as a linear pipeline:
//!
//! * [`market_data`] loads and aligns daily price files, computes log returns
//!   and builds forward drawdown labels. [`synthetic`] generates seeded panels
//!   with planted crash regimes for testing and demos.
//! * [`features`] computes rolling moments, entropy, Hurst exponents,
//!   beta/correlation against the target and rolling KL divergence.
//! * [`selection`] filters low-variance and collinear columns and ranks the
//!   survivors by mutual information with the label.
//! * [`learners`] holds the from-scratch MLP, two gradient-boosted tree
//!   variants, the soft-voting ensemble and time-ordered grid search.
//! * [`evaluation`], [`attribution`] and [`backtest`] score, explain and trade
//!   the ensemble's crash probabilities.
//! * [`pipeline`] and [`config`] drive everything from a TOML run file.

pub mod attribution;
pub mod backtest;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod market_data;
pub mod pipeline;
pub mod rng;
pub mod selection;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
