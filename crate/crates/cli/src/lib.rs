//! File formats, experiment runner and command-line verbs around `slamkit`.

pub mod commands;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod simconfig;

pub use dataset::{load_dataset, save_dataset};
pub use error::{CliError, DataError};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, Metrics};
