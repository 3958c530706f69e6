use thiserror::Error;

/// Errors raised anywhere in the reserving pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReserveError {
    #[error("observed cells do not form an upper-left triangle: {0}")]
    RaggedShape(String),

    #[error("duplicate cell ({i}, {j})")]
    DuplicateCell { i: usize, j: usize },

    #[error("non-numeric value {value:?} at line {line}")]
    NonNumericValue { line: usize, value: String },

    #[error("empty input: no triangle cells found")]
    EmptyInput,

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("expected a {expected} triangle")]
    WrongKind { expected: &'static str },

    #[error("index ({i}, {j}) outside 1..={n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("matrix of size {size} is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { size: usize, min_eigenvalue: f64 },

    #[error("fitted mean must be positive, got {0}")]
    NonPositiveMean(f64),

    #[error("degenerate fit: {observations} observations for {parameters} parameters")]
    DegenerateFit { observations: usize, parameters: usize },

    #[error("not enough within-cluster pairs to estimate {0}")]
    InsufficientPairs(String),

    #[error("working covariance of cluster {cluster} is singular")]
    SingularWorkingCovariance { cluster: usize },

    #[error("information matrix B is singular (condition estimate {condition:.3e})")]
    SingularB { condition: f64 },

    #[error("fit diverged at iteration {iteration}: non-finite mean or parameter")]
    DivergedFit { iteration: usize },

    #[error("fit did not converge; prediction refused")]
    NotConverged,

    #[error("models are not comparable: {0}")]
    MismatchedModels(String),

    #[error("future correlations are not defined for the {0} structure")]
    UnsupportedStructureForPrediction(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, ReserveError>;
