//! Experiment orchestration for the search-strategy benchmarks: configuration,
//! artifact cache, runners, CSV reports and SVG pattern plots.

pub mod cache;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod runners;

pub use config::{ExperimentConfig, ExperimentKind, Method};
pub use runners::RunContext;

use dpse::Error;

/// Process exit code for an error: 2 for configuration, 3 for numeric
/// failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}
