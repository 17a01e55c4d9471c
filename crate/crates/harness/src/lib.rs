//! Experiment orchestration for perturbed cat-map echo studies: config
//! handling, sweeps, correlation analysis and CSV output.

pub mod config;
pub mod correlate;
mod error;
pub mod output;
pub mod sweep;

pub use config::{ChiGrid, EchoReference, Experiment, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use sweep::{run, RunSummary, Runner};
