//! Bitcoin transaction-fee estimation toolkit.
//!
//! Four estimators share one set of domain types ([`model`]):
//!
//! * [`btcflow`]: mempool inflow/outflow drain model driven by a Poisson block count.
//! * [`bcore`]: exponentially decayed per-bucket confirmation statistics.
//! * [`mslp`]: virtual-block positions fed to per-range linear classifiers.
//! * [`fenn`]: a neural estimator over transaction, mempool and block-sequence features,
//!   built on the small hand-differentiated engine in [`nn`].
//!
//! [`ingest`] loads chain dumps and generates seeded synthetic chains and
//! [`eval`] replays a chain to score every estimator with RMSE and MAPE.

pub mod bcore;
pub mod btcflow;
pub mod cli;
pub mod error;
pub mod eval;
pub mod fenn;
pub mod ingest;
pub mod model;
pub mod mslp;
pub mod nn;

pub use error::{Error, Result};
