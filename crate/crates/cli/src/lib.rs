//! Experiment runner for ergolab: configuration parsing, orchestration of
//! the estimators and machine-readable report emission.

pub mod config;
pub mod report;
pub mod run;

pub use config::{parse_config, ConfigErrors, ConfigIssue, ExperimentConfig, ExperimentKind, OutputFormat};
pub use report::{emit, render, Cell, EmitError, ExperimentReport, Status, Table};
pub use run::{run, RunError, VERSION};

/// Exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
