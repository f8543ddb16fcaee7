use thiserror::Error;

/// Errors raised by the estimator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no active channels")]
    NoActiveChannels,
    #[error("empty axis selection for vector channel `{0}`")]
    EmptyAxes(String),
    #[error("invalid axis {axis} for vector channel `{channel}` (expected 1, 2 or 3)")]
    InvalidAxis { channel: String, axis: usize },
    #[error("zero body-frame landmark difference carries no direction")]
    ZeroLandmarkDifference,
    #[error("zero-length probe direction")]
    ZeroDirection,
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
    #[error("matrix `{0}` is not symmetric positive semidefinite")]
    NotPsd(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("innovation matrix is ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),
    #[error("time-reversed record at t = {t} (previous t = {prev})")]
    TimeReversed { t: f64, prev: f64 },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("missing IMU data: {0}")]
    MissingImu(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed record {row}: {msg}")]
    MalformedRecord { row: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
