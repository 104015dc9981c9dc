use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at state index {index} ({name})")]
    NonFiniteState { index: usize, name: String },

    #[error(
        "integration failed at sub-step {substep}: worst component {index} ({name}) = {value}"
    )]
    IntegrationFailure {
        substep: usize,
        index: usize,
        name: String,
        value: f64,
    },

    #[error("negative concentration {value} in settler layer {layer} after sub-step {substep}")]
    NegativeSettlerConcentration {
        layer: usize,
        substep: usize,
        value: f64,
    },

    #[error("simulation diverged at step {step}: state norm {norm:e}")]
    Divergence { step: usize, norm: f64 },

    #[error("input out of bounds: {0}")]
    InputOutOfBounds(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("time {t} outside series span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset split `{0}`")]
    EmptySplit(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
