use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("objective is not convex (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotConvex { min_eigenvalue: f64 },
    #[error("lower limit exceeds upper limit on {what} {index}")]
    InconsistentLimits { what: &'static str, index: usize },
    #[error("problem data contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BnbError {
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("binary index {0} out of range")]
    BinaryIndexOutOfRange(usize),
    #[error("binary variable {index} must have bounds within [0, 1], found [{lb}, {ub}]")]
    BinaryBounds { index: usize, lb: f64, ub: f64 },
    #[error("enumeration supports at most {max} binaries, got {got}")]
    TooManyBinaries { max: usize, got: usize },
    #[error("no fractional binary to branch on")]
    NothingToBranch,
    #[error("invalid configuration: {0}")]
    Config(String),
}
