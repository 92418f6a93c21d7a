//! Run configuration, experiment drivers and output files.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{run, Command, RunOptions};
pub use config::{load_config, RunConfig};
pub use error::CliError;
pub use manifest::RunManifest;
