use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // data model
    #[error("site rejected: valid fraction {0:.4} below threshold")]
    SiteRejected(f64),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("feature column `{0}` has no present values")]
    EmptyColumn(String),
    #[error("feature column `{0}` still has missing values")]
    NotInterpolated(String),
    #[error("split has no valid targets: {0}")]
    EmptySplit(&'static str),
    #[error("train and test years overlap in year {0}")]
    OverlappingSplit(i32),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // feature engineering
    #[error("division by zero while computing {0}")]
    DivisionByZero(&'static str),
    #[error("band `{band}` required by {index} is missing")]
    MissingBand { index: &'static str, band: &'static str },
    #[error("input must be strictly positive, got {0}")]
    NonPositiveInput(f64),
    #[error("column {0} has zero variance")]
    DegenerateMatrix(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // extremes
    #[error("series has no present GPP values")]
    EmptySeries,
    #[error("seasonal cycle has no value for {month:02}-{day:02}")]
    MissingCycleDay { month: u32, day: u32 },
    #[error("need at least {needed} present anomalies, found {found}")]
    InsufficientData { needed: usize, found: usize },

    // network
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("non-finite activation encountered")]
    NonFiniteActivation,
    #[error("forward cache does not match parameters: {0}")]
    CacheMismatch(String),

    // training / evaluation
    #[error("empty batch")]
    EmptyBatch,
    #[error("hyperparameter search space is empty: {0}")]
    EmptySpace(String),
    #[error("observed values have zero range")]
    ZeroRange,
    #[error("need at least two samples, found {0}")]
    SingleSample(usize),

    // io
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: dates are not consecutive days")]
    NonConsecutiveDates { path: PathBuf, line: usize },
    #[error("duplicate feature `{0}`")]
    DuplicateFeature(String),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Broad failure classes, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::OverlappingSplit(_)
            | Error::InvalidSpec(_)
            | Error::InvalidArchitecture(_)
            | Error::EmptySpace(_) => ErrorClass::Config,
            Error::NonFiniteActivation => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
