//! Config-driven runner for survey-weighted estimation, evaluation,
//! cross-validation, calibration and synthetic validation.

pub mod commands;
pub mod config;
pub mod data;
pub mod logging;
pub mod report;

pub use commands::{run, Command};
pub use config::{Overrides, RunConfig};
pub use report::Report;
