//! Seeded benchmark suites for the hci-gibo optimizers, with CSV and JSON
//! output.

pub mod cli;
pub mod config;
pub mod error;
pub mod suite;

pub use config::{ExperimentConfig, PlannedRun, Suite};
pub use error::HarnessError;
pub use suite::{execute, run_suite, RunOutput, SuiteOutput, Summary};
