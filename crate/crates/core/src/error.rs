use std::path::PathBuf;

use thiserror::Error;

use crate::synth::Precondition;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("eigenvalue {value:e} is below the negative tolerance floor {floor:e}")]
    IndefiniteBeyondTolerance { value: f64, floor: f64 },
    #[error("matrix is singular within tolerance (smallest eigenvalue {min_eigenvalue:e}); was the ridge applied?")]
    SingularWithinTolerance { min_eigenvalue: f64 },
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("spectrum has zero total mass")]
    DegenerateSpectrum,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at least 2 surrogate classes are required, got {0}")]
    TooFewClasses(usize),
    #[error("at least 2 samples per class are required, got {0}")]
    TooFewSamplesPerClass(usize),
    #[error("ridge delta must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("target dimension {k} outside [1, {p}]")]
    BadTargetDim { k: usize, p: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{0} has zero variance after ranking; the coefficient is undefined")]
    ZeroVariance(&'static str),
    #[error("every pair is tied; the coefficient is undefined")]
    AllPairsTied,
    #[error("no record carries both the metric and the oracle field")]
    NoEligibleRecords,

    #[error("bad synthetic spec: {0}")]
    BadSpec(String),
    #[error("precondition violated: {0:?}")]
    PreconditionViolated(Vec<Precondition>),

    #[error("bad magic {0:?}, expected \"EMB1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported EMB1 version {0}")]
    BadVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("line {line}: missing cell in column {column}")]
    MissingCell { line: u64, column: usize },
    #[error("duplicate (class_id, sample_id) pair ({class_id}, {sample_id})")]
    DuplicatePair { class_id: usize, sample_id: usize },
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate model id {0:?}")]
    DuplicateModelId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
