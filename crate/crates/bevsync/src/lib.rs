//! File formats and the `bevsync` command-line driver.

pub mod commands;
pub mod error;
pub mod formats;

pub use commands::{cmd_correspond, cmd_demo, cmd_evaluate, cmd_generate, cmd_project, CommandOutput, RunConfig};
pub use error::{CliError, CliResult};
