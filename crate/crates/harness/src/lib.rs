//! Experiment engine for `agnosticq`: seeded sweeps over generated
//! instances, premise and bound checks, CSV and JSON reports.

pub mod bounds;
pub mod config;
pub mod report;
pub mod sweep;
pub mod verify;

pub use config::{ClassKind, ExperimentConfig, Mode};
pub use report::{Report, Row, Status, Summary};
pub use sweep::{run_sweep, run_trial};
pub use verify::{verify_bounds, CheckLine, VerifySummary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("row for seed {seed} has no {column}")]
    MissingCounter { seed: u64, column: &'static str },

    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error(transparent)]
    Core(#[from] agnosticq_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
