//! Experiment harness: configuration, persistence and subcommand dispatch.

pub mod config;
pub mod io;
pub mod run;

pub use config::{load_config, parse_config, ExperimentConfig, Subcommand};
pub use io::load_samples;
pub use run::{run, RunManifest, RunOptions};
