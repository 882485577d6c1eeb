use std::fmt;
use std::path::PathBuf;

/// Errors produced by scenario construction, estimation and file I/O.
#[derive(Debug)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    InvalidConfig(String),
    /// The measurement geometry does not support an estimate (rank loss,
    /// singular normal matrix, coincident anchor/tag positions).
    DegenerateGeometry(String),
    /// SO(2) projection of a matrix whose singular values are all below
    /// threshold; the projection direction is undefined.
    DegenerateProjection,
    /// Waypoint resampling exhausted its attempt budget without producing
    /// a valid path.
    ScheduleSampling(String),
    /// File read/write failure, with the offending path.
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed scenario/experiment/measurement file content.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::DegenerateGeometry(msg) => write!(f, "degenerate geometry: {msg}"),
            Error::DegenerateProjection => {
                write!(f, "SO(2) projection undefined: all singular values below 1e-12")
            }
            Error::ScheduleSampling(msg) => write!(f, "schedule sampling failed: {msg}"),
            Error::Io { path, source } => write!(f, "I/O error on {}: {source}", path.display()),
            Error::Format(msg) => write!(f, "malformed file: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
