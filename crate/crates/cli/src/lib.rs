//! Data ingestion, run configuration and batch workflows for joint
//! imputation models.

pub mod adjacency;
pub mod build;
pub mod config;
pub mod dataset;
pub mod derive;
pub mod error;
pub mod output;
pub mod workflows;

pub use error::{CliError, Result};
