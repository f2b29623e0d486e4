//! Synthetic pulse-oximetry cohorts with switchable measurement and systemic
//! bias, and a statistical audit of the data-equity metrics computed on them.

pub mod cohort;
pub mod error;
pub mod figure;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
