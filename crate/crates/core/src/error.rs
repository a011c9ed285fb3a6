use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("undistortion did not converge for pixel ({u}, {v})")]
    UndistortionDiverged { u: f64, v: f64 },

    #[error("preintegration needs at least 2 IMU samples, got {0}")]
    TooFewImuSamples(usize),

    #[error("IMU timestamps not strictly increasing at sample {index} ({timestamp_ns} ns)")]
    NonMonotonicImu { index: usize, timestamp_ns: i64 },

    #[error("IMU stream does not cover [{start_ns}, {end_ns}] ns")]
    ImuCoverage { start_ns: i64, end_ns: i64 },

    #[error("insufficient keyframes: need at least {needed}, got {got}")]
    InsufficientKeyframes { needed: usize, got: usize },

    #[error("no feature track has two or more observations in the window")]
    NoUsableTracks,

    #[error("every feature track failed triangulation ({dropped} dropped)")]
    AllTracksDropped { dropped: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} is empty")]
    Empty { what: &'static str },

    #[error("no state in the truth trajectory within 1 ms of estimate timestamp {timestamp_ns} ns")]
    Association { timestamp_ns: i64 },

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}:{line}: timestamp {timestamp_ns} ns is not after the previous row", path.display())]
    NonMonotonicFile {
        path: PathBuf,
        line: usize,
        timestamp_ns: i64,
    },

    #[error("{}:{line}: track observation references unknown keyframe timestamp {timestamp_ns} ns", path.display())]
    DanglingTrack {
        path: PathBuf,
        line: usize,
        timestamp_ns: i64,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to serialize report: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
