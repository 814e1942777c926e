//! Command-line front end: run configs, aggregate results, verify invariants.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod suite;

pub use error::CliError;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "RGSMC_WORKERS";
