//! Command-line runs for mode-specific tensor time series representations:
//! data synthesis and ingestion, training, encoding, probing, the ablation
//! harness and the disentanglement case study.

pub mod ablate;
pub mod casestudy;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;

pub use config::{load_config, RunConfig};
pub use error::{CliError, Result};
pub use manifest::{RunDir, RunManifest};
