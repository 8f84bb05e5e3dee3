//! Configuration, orchestration, persistence, and plots.

pub mod config;
pub mod csvio;
pub mod fixtures;
pub mod plot;
pub mod suite;

pub use config::{
    EscapeOptions, ExperimentConfig, GraphConfig, LandscapeOptions, LossConfig,
    PerturbationConfig, RegimeFlags, TheoryOptions, TrainingBlock,
};
pub use plot::PlotKind;
pub use suite::{resolve, run_suite, ResolvedExperiment, SuiteArtifacts};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("io error on {0}: {1}")]
    Io(String, std::io::Error),
    #[error("output directory {0} is locked by another run")]
    Locked(String),
    #[error("run diverged: strategy {strategy}, trial {trial}, iteration {iteration}")]
    Diverged { strategy: String, trial: usize, iteration: usize },
    #[error("could not locate the risk minimizer: {0}")]
    MinimizerNotFound(String),
    #[error(transparent)]
    Adversary(#[from] crate::adversary::AdversaryError),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
    #[error(transparent)]
    Theory(#[from] crate::theory::TheoryError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
