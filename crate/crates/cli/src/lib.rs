//! Experiment harness for `rsqn`: dataset ingestion, the recovery sweep, optimization
//! and spectrum runs, and the acceptance self-test.

pub mod config;
pub mod error;
pub mod ingest;
pub mod optimize;
pub mod output;
pub mod recover;
pub mod selftest;

pub use error::{CliError, Result};
