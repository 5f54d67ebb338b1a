//! Experiment harness: scenario construction, the paired round loop, and
//! persistence of logs, aggregates and manifests.

// `!(x > 0)` also rejects NaN; index loops read closer to the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod runner;

use std::path::PathBuf;

use nela_core::NelaError;
use thiserror::Error;

pub use config::{ExperimentConfig, PolicyKind, Scenario};
pub use runner::{regather, run_experiment, simulate, CellResult, ReplayData};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] NelaError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    /// Process exit status: 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Validation(_) => 2,
            HarnessError::Core(NelaError::InvalidInput(_) | NelaError::Load { .. } | NelaError::Csv(_)) => 2,
            _ => 3,
        }
    }
}

/// Worker count from `NELA_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("NELA_WORKERS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&w: &usize| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
