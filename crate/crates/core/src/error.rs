//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible operand shapes, e.g. in a matrix product.
    #[error("dimension mismatch in {op}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// An operation received an empty input it cannot define a result for.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// An argument is outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bad configuration (file contents, field values, modality wiring).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric result left the finite range; training aborts on this.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// An exhaustive search would exceed its enumeration budget.
    #[error("enumeration budget exceeded: {combinations} subsets > limit {limit}")]
    BudgetExceeded { combinations: u128, limit: u128 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
