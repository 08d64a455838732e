//! Command-line driver for dataset generation, training and evaluation.

pub mod config;
pub mod error;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use run::{run, Command, RunOptions};
