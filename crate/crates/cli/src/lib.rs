//! Command-line pipeline and HTTP service around the `editvq` library.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod server;
pub mod suggest;

pub use error::{CliError, CliResult};
