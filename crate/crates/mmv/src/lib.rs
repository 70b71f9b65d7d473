//! Command-line driver for `mmv-core`: TOML run configurations, the
//! subcommands and their CSV artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::CliError;
pub use output::Report;
