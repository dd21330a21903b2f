//! Design-based survey statistics and survey-weighted model evaluation.
pub mod calibrate;
pub mod cv;
pub mod design;
pub mod estimate;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod replicate;
pub mod stats;
pub mod synth;

/// Library version, recorded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use design::{build_design, validate_design, DesignBuilder, DesignDiagnostics, DesignError, DesignFrame, DesignMapping, LonelyPsuPolicy, Observation};
pub use estimate::{EstimateError, EstimateMethod, EstimateWithSE};
pub use ingest::{Cell, Column, IngestError, RawTable};
