//! Experiment driver for dissipative XYZ lattices: configuration, commands
//! and output files of the `dxyz` binary.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{CliError, CliResult, Summary};
pub use config::{ConfigError, ExperimentConfig, Method, Overrides};
