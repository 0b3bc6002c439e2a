use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    Empty,
    #[error("ragged rows: line {line} has {found} columns, expected {expected}")]
    RaggedRows {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("derivative order {0} is not supported (allowed: 1..=3)")]
    BadOrder(usize),
    #[error("derivative spacing must be at least 1")]
    BadSpacing,
    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("cache does not match parameters: {0}")]
    StaleCache(String),
    #[error("closure is not deterministic: {first} != {second}")]
    NonDeterministicClosure { first: f64, second: f64 },
    #[error("rollout diverged at step {step}: |state| = {magnitude:e}")]
    Diverged { step: usize, magnitude: f64 },
    #[error("training loss diverged at iteration {0}")]
    DivergedLoss(usize),
    #[error("sequences are too short for a window of {needed} frames (longest has {available})")]
    DataTooShort { needed: usize, available: usize },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt file {path}: {msg}")]
    CorruptFile { path: PathBuf, msg: String },
    #[error("signal of length {0} is too short for a spectrum")]
    TooShort(usize),
    #[error("all spectral weights are zero")]
    DegenerateEvalSet,
    #[error("slice {ms} ms is out of range (frame {frame}, sequence has {len})")]
    SliceOutOfRange { ms: f64, frame: usize, len: usize },
    #[error("slice {ms} ms is not an integer frame at {fps} fps")]
    FrameRateMismatch { ms: f64, fps: f64 },
    #[error("window [{start}, {end}) is out of range for length {len}")]
    WindowOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("synthetic spec is invalid: {0}")]
    BadSpec(String),
    #[error("analytic spectrum requires zero noise")]
    NoiseNotZero,
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
