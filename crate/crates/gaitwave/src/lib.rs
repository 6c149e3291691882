//! File formats, experiment runner and reports around `gaitwave-core`.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod format;
pub mod report;
pub mod runner;
pub mod synth_io;

pub use error::{CliError, Result};
