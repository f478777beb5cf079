//! Config-driven experiment runs producing one CSV and one manifest each.

pub mod config;
pub mod run;

pub use config::{load, validate, ExperimentConfig, ExperimentKind, Plan};
pub use run::{compute_rows, config_hash, describe, run, write_csv, CsvRow, RunOptions, RunOutcome};
