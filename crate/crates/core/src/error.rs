use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Validation and input problems are distinguished from numerical
/// non-convergence so that callers (the CLI in particular) can map them to
/// different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} has shape {found}, expected {expected}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("nonpositive mass: {side}[{index}] = {value}")]
    NonPositiveMass {
        side: &'static str,
        index: usize,
        value: f64,
    },

    #[error("non-integer mass in deterministic market: {side}[{index}] = {value}")]
    NonIntegerMass {
        side: &'static str,
        index: usize,
        value: f64,
    },

    #[error("non-finite utility: {matrix}[{row}][{col}] = {value}")]
    NonFiniteUtility {
        matrix: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("non-finite waiting time at [{row}][{col}]")]
    NonFiniteWait { row: usize, col: usize },

    #[error("empty type set: {0}")]
    EmptyTypeSet(&'static str),

    #[error("duplicate type identifier `{0}`")]
    DuplicateType(String),

    #[error("unknown type identifier `{0}` in shock overrides")]
    UnknownType(String),

    #[error("invalid shock specification: {0}")]
    InvalidShock(String),

    #[error("market has no shock specification (deterministic mode)")]
    NoShocks,

    #[error("provider not smooth: {0}")]
    ProviderNotSmooth(String),

    #[error("capacity must be at least 1e-12: mu_bar[{row}][{col}] = {value}")]
    NonPositiveCapacity { row: usize, col: usize, value: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        solver: String,
        iterations: usize,
        residual: f64,
    },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("no stable integral outcome: {0}")]
    NoStableRounding(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// True for failures of an iterative method to reach its tolerance, as
    /// opposed to bad input or a violated precondition.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. } | Error::InvariantViolation(_) | Error::NoStableRounding(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
