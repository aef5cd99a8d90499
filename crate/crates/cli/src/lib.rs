//! File formats, dataset ingestion and the command-line front end for `s2o-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod images;
pub mod tensor_io;

pub use error::{CliError, CliResult};
