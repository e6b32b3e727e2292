use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("exponent pair is not strictly below the critical hyperbola (delta0 = {delta0:e})")]
    NotStrictlySubcritical { delta0: f64 },

    #[error("band limit mismatch: expected {expected}, got {got}")]
    BandLimitMismatch { expected: usize, got: usize },

    #[error("trace and Neumann data are not related by the NtD map (relative defect {defect:e})")]
    DataMismatch { defect: f64 },

    #[error("boundary data is identically zero")]
    ZeroData,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Solve(#[from] crate::solver::SolveError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
