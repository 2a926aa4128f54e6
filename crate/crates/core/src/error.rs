use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pivot ({p}, {q}) is already zero within tolerance")]
    DegeneratePivot { p: usize, q: usize },

    #[error("index ({i}, {j}) out of range for dimension {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("pivot ({p}, {q}) is not a legal action in this state")]
    IllegalAction { p: usize, q: usize },

    #[error("step requested on a terminal state")]
    StepOnTerminal,

    #[error("terminal value requested before the game ended")]
    NotTerminal,

    #[error("search root is terminal")]
    TerminalRoot,

    #[error("search root has no legal actions")]
    NoLegalActions,

    #[error("matrix size {n} exceeds the policy capacity n_max = {n_max}")]
    SizeExceedsMax { n: usize, n_max: usize },

    #[error("non-finite loss {loss} at step {step}: {detail}")]
    NonFiniteLoss {
        loss: f64,
        step: usize,
        detail: String,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error(
        "no convergence after {sweeps} sweeps / {rotations} rotations (off-norm {off_norm:e})"
    )]
    NonConvergence {
        sweeps: usize,
        rotations: usize,
        off_norm: f64,
    },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),

    #[error("no training data")]
    EmptyData,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
