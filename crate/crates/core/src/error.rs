use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report. The CLI prints [`Error::name`]
/// verbatim so scripts can match on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("coordinate out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid scale factor {0}")]
    InvalidScale(f64),
    #[error("bilinear interpolation is not defined for label or binary grids")]
    UnsupportedInterpolation,
    #[error("stain matrix is singular or malformed: {0}")]
    SingularStainMatrix(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("insufficient support for the fixed window: {0}")]
    InsufficientSupport(String),
    #[error("empty series")]
    EmptySeries,
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("series lengths {n} and {m} cannot be aligned within band radius {radius}")]
    BandInfeasible { n: usize, m: usize, radius: usize },
    #[error("invalid pairing: {0}")]
    InvalidPairing(String),
    #[error("geometry too small: {0}")]
    GeometryTooSmall(String),
    #[error("invalid slide metadata: {0}")]
    InvalidMeta(String),
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("malformed input {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidAnnotation(_) => "InvalidAnnotation",
            Error::OutOfBounds(_) => "OutOfBounds",
            Error::InvalidScale(_) => "InvalidScale",
            Error::UnsupportedInterpolation => "UnsupportedInterpolation",
            Error::SingularStainMatrix(_) => "SingularStainMatrix",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::DegenerateLabels(_) => "DegenerateLabels",
            Error::InsufficientSupport(_) => "InsufficientSupport",
            Error::EmptySeries => "EmptySeries",
            Error::InvalidValue(_) => "InvalidValue",
            Error::BandInfeasible { .. } => "BandInfeasible",
            Error::InvalidPairing(_) => "InvalidPairing",
            Error::GeometryTooSmall(_) => "GeometryTooSmall",
            Error::InvalidMeta(_) => "InvalidMeta",
            Error::FileNotFound(_) => "FileNotFound",
            Error::Format { .. } => "FormatError",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
