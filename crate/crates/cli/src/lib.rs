//! Config-driven experiment runner for the `tthf` simulator.
//!
//! A run reads one TOML file, builds the dataset, cluster graphs and loss,
//! trains every replicate, evaluates the enabled bound checks and writes
//! `trace.csv`, `bounds.csv`, `summary.csv` and the fully resolved config.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{parse_config, ExperimentConfig};
pub use error::{CliError, Result};
pub use experiment::{run_experiment, ExperimentOutput, RunSummary};
