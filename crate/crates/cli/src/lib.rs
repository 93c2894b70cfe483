//! Experiment runner for the `amagold` samplers.
//!
//! Experiments are described by an [`ExperimentConfig`] assembled from an
//! optional JSON file and command-line flags, and executed by
//! [`run_experiment`], which writes CSV artifacts and a JSON run report into
//! the output directory.

pub mod config;
pub mod experiment;

use std::path::PathBuf;

pub use config::{parse_args, ExperimentConfig};
pub use experiment::run_experiment;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(clap::Error),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Usage(Vec<String>),

    #[error(transparent)]
    Core(#[from] amagold::Error),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
