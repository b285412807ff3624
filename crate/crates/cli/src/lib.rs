//! Library surface of the `sodet` command-line tool, exposed so
//! integration tests can drive commands in-process.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{run, Cli, Command};
pub use config::{Overrides, RunConfig, DEFAULT_CONFIG_TOML, OUT_DIR_ENV};
