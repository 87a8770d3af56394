use thiserror::Error;

/// Which side of a Kronecker product a failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The right factors `A_k` (size n), acting on the columns of `X`.
    Right,
    /// The left factors `B_k` (size m), acting on the rows of `X`.
    Left,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Right => write!(f, "right"),
            Side::Left => write!(f, "left"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("{what} needs size {required}, above the cap of {cap}")]
    SizeGuard {
        what: &'static str,
        required: usize,
        cap: usize,
    },

    #[error("factor matrices {name} are linearly dependent (singular Gram or normal-equation matrix)")]
    DependentFactors { name: &'static str },

    #[error("{side} coefficient matrix is numerically singular")]
    SingularCoefficient { side: Side },

    #[error("Sylvester equation has no unique solution: {0}")]
    NoUniqueSolution(String),

    #[error(
        "two-sided reduction is ill-conditioned (condition estimate {estimate:.3e}); \
         try swapping the roles of terms 1 and 2"
    )]
    ReductionConditioning { estimate: f64 },

    #[error("Kronecker rank {0} preconditioners cannot be applied directly (only q = 1 or 2)")]
    UnsupportedRank(usize),

    #[error("diagnostic not applicable: {0}")]
    Inapplicable(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
