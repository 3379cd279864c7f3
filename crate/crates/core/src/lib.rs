//! Block-variable estimators, block bootstraps and Edgeworth expansions for
//! weakly dependent time series.

pub mod blocks;
pub mod edgeworth;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod io;
pub mod procgen;
pub mod resample;
pub mod rng;

pub use error::{Error, Result};
