//! Configuration, orchestration and output for the `ibflab` command.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, ConfigError, Experiment, RunConfig};
pub use run::{run, RunError, RunSummary};
