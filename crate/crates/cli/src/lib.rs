//! Batch front end for guided bridge experiments: experiment files, the
//! runners behind each subcommand, and the output manifest.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, ConfigErrors, ExperimentConfig};
pub use run::{run, Command, Outcome};
