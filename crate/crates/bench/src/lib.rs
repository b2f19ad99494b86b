//! Experiment driver for the `raqr` command line: sweeps, data generation,
//! training and checkpoint inspection.

pub mod cli;
pub mod error;
pub mod experiment;

pub use error::{BenchError, Result};
pub use experiment::{run_experiment, ExperimentKind, ExperimentSpec, ResultRow, RunSummary, CSV_HEADER};
