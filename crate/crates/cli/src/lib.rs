//! File formats, run configuration and subcommand implementations behind the
//! `mmct` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::RunConfig;
pub use error::CliError;
