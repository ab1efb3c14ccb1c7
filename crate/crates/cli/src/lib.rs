//! Pipeline wiring for the `courtsight` command-line tool: configuration,
//! file formats, the LiDAR-only and fusion pipelines, and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod sim;

pub use error::{CliError, Result};
