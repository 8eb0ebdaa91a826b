//! File formats, configuration and command-line tools around
//! `pggtrack-core`.

pub mod atomic;
pub mod bench;
pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod gradsuite;
pub mod plot;
pub mod records;
pub mod report;

pub use error::{CliError, FormatError};
