//! Persistence formats, experiment configuration and the command-line driver.

pub mod cli;
pub mod config;
pub mod container;
pub mod experiment;
pub mod persist;

pub use cli::run_command;
pub use config::{AnalysisConfig, CohortConfig, ExperimentConfig, Split};
pub use container::{Dtype, NamedTensor, Provenance, TensorContainer, TensorData};
pub use experiment::ExperimentDir;
pub use persist::{load_model, save_model};
