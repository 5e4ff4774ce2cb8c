//! File formats, reports and the command-line driver around `lemer-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_file;
pub mod error;
pub mod report;

pub use error::{Error, Result};
