use std::fmt;

/// A single failed scenario check, addressed by its JSON field path.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed: {}", join(.0))]
    Validation(Vec<Violation>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("matrix is zero, no dominant eigenvector")]
    ZeroMatrix,

    #[error("subproblem infeasible: {0}")]
    Infeasible(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("link budget needs d1_m and d2_m")]
    MissingDistances,

    #[error("unsupported bit depth {0} (expected 1..=4)")]
    UnsupportedBits(u32),

    #[error("phase level {level} of {levels} is not covered by the pattern catalog")]
    Uncoverable { level: u32, levels: u32 },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::UnsupportedBits(_) => 2,
            Error::Infeasible(_) => 3,
            Error::Invariant(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
