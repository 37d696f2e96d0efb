//! Library side of the `subshrink` binary: configuration, subcommands and
//! output writers.

pub mod analyze;
pub mod calibrate;
pub mod config;
pub mod error;
pub mod output;
pub mod simulate;
pub mod svg;

pub use error::{CliError, Result};
