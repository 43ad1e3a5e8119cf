//! Experiment harness for the `fjt-core` simulator: TOML configuration,
//! parallel sweeps over seeds and energy arrival rates, and the CSV and
//! text file formats used by the `fjt` CLI.

pub mod config;
pub mod experiment;
pub mod io;

pub use config::{Algorithm, ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, run_experiment_with, ExperimentOutput, HarnessError, MetricsRecord, RunOptions};
