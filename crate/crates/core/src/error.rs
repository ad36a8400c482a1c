use thiserror::Error;

use crate::env::{SaPair, StateId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The layered structure of an MDP is malformed (wrong table shapes,
    /// transitions past the horizon, out-of-range next states).
    #[error("level structure violation: {0}")]
    LevelStructure(String),

    #[error("reward range violation: {0}")]
    RewardRange(String),

    #[error("policy undefined at state {0:?}")]
    PolicyUndefined(StateId),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("function class is empty")]
    EmptyClass,

    #[error("function class does not cover the state-action space: {0}")]
    ClassShape(String),

    #[error("eluder domain has {0} points; brute force is limited to 12")]
    DomainTooLarge(usize),

    #[error("reward sample {value} at {pair:?} is outside [0, 1]")]
    SampleOutOfRange { pair: SaPair, value: f64 },

    #[error("recursion exceeded the horizon at {0:?}")]
    RecursionDepth(StateId),

    #[error("exploration exceeded the cap of {0} dataset entries")]
    ExplorationCap(usize),

    #[error("wall-clock budget exhausted")]
    Timeout,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
