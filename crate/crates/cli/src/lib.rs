//! The `agf` command line: one subcommand per pipeline stage, a layered
//! TOML configuration, and a hashed manifest for every run.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use args::Cli;
pub use config::{AppConfig, Scale};
pub use error::{exit, CliError, CliResult};
pub use manifest::{manifest_name, FileHash, RunManifest};
