//! Configuration, file formats, experiments and property checks around
//! `stiflow-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod simulate;
pub mod verify;

pub use config::{ExperimentConfig, Setup};
pub use error::{CliError, Result};
