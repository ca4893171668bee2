//! Valence/arousal regression for text-aspect pairs with two regression
//! heads over a shared encoder, task losses balanced by learned
//! log-variances, seed ensembling and variance diagnostics.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod features;
mod fsutil;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
