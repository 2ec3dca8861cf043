//! Command-line layer: run configuration, dataset CSV I/O, the `fit`,
//! `region` and `simulate` commands and the parallel coverage study.

pub mod commands;
pub mod config;
pub mod coverage;
pub mod csvio;
pub mod error;

pub use error::{CliError, CliResult};
