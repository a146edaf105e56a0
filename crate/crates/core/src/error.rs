use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("gap equation has no root in the bracket [{lo:e}, {hi:e}] (lambda={lambda}, K={big_k})")]
    NoRoot {
        lo: f64,
        hi: f64,
        lambda: f64,
        big_k: f64,
    },

    #[error("quadrature did not reach tolerance: estimate {value:e}, error {error:e}")]
    Quadrature { value: f64, error: f64 },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("operator is singular: min |1 + eigenvalue| = {0:e}")]
    Singular(f64),

    #[error("iteration did not converge after {0} steps")]
    NoConvergence(usize),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("size guard: {what} = {got} exceeds limit {limit}")]
    SizeGuard {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    #[error("sign problem: |<w>|/<|w|> = {0:.4} is below the abort threshold")]
    SignProblem(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
