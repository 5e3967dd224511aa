//! Experiment runner for adaptive multi-teacher distillation: TOML
//! experiment configs, the transfer-then-distill pipeline, result tables
//! and plot-ready weight traces.

pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod results;

pub use config::{Ablation, ExperimentConfig, ModelShape, SystemConfig};
pub use error::{HarnessError, Result};
pub use results::{ResultRow, ResultsTable};
