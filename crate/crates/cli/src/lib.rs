//! Command implementations behind the `nodebias` binary.

pub mod commands;
pub mod error;
pub mod manifest;

pub use commands::{execute, rerun, Command};
pub use error::CliError;
pub use manifest::Manifest;
