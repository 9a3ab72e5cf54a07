use std::path::PathBuf;

/// Errors raised anywhere in the pruning toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op} at node {node}: node {lhs} is {lhs_shape:?}, node {rhs} is {rhs_shape:?}")]
    ShapeMismatch {
        op: &'static str,
        node: usize,
        lhs: usize,
        lhs_shape: (usize, usize),
        rhs: usize,
        rhs_shape: (usize, usize),
    },
    #[error("node {0} has no value; run forward first")]
    NotForwarded(usize),
    #[error("backward requires a scalar root, node {node} is {shape:?}")]
    NonScalarRoot { node: usize, shape: (usize, usize) },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("unknown parameter: {0}")]
    UnknownParameter(String),
    #[error("no moment table for parameter {0}")]
    MissingMoments(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("length mismatch: expected {expected}, got {actual} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("pruning ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("target budget b={0} is infeasible: every layer is pruned at least 0.1, so b must be >= 0.1")]
    InfeasibleBudget(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("no valid configuration found; increase the simulation count or relax b (b={0})")]
    NoValidConfig(f64),
    #[error("search space too large: {0} configurations (limit 1e6)")]
    SearchSpaceTooLarge(f64),
    #[error("rejection rate above 99.9% while sampling valid configurations for b={0}")]
    RejectionRate(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("measured zero elapsed time after 5 attempts for {0}")]
    ZeroTiming(String),
    #[error("fingerprint mismatch for {what}: expected {expected}, found {found}")]
    Fingerprint {
        what: String,
        expected: String,
        found: String,
    },
    #[error("missing input file {0}")]
    MissingFile(PathBuf),
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NotForwarded(_) => "not_forwarded",
            Error::NonScalarRoot { .. } => "non_scalar_root",
            Error::InvalidMatrix(_) => "invalid_matrix",
            Error::UnknownParameter(_) => "unknown_parameter",
            Error::MissingMoments(_) => "missing_moments",
            Error::Diverged { .. } => "diverged",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::RatioOutOfRange(_) => "ratio_out_of_range",
            Error::InfeasibleBudget(_) => "infeasible_budget",
            Error::Empty(_) => "empty_input",
            Error::NoValidConfig(_) => "no_valid_config",
            Error::SearchSpaceTooLarge(_) => "search_space_too_large",
            Error::RejectionRate(_) => "rejection_rate",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ZeroTiming(_) => "zero_timing",
            Error::Fingerprint { .. } => "fingerprint_mismatch",
            Error::MissingFile(_) => "missing_file",
            Error::Schema { .. } => "schema",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
