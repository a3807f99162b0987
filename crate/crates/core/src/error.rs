use thiserror::Error;

/// Errors raised by hierarchy construction, estimation, solving and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("hierarchy contains a cycle through node '{0}'")]
    Cycle(String),

    #[error("node '{0}' is not reachable from the total")]
    Unreachable(String),

    #[error("hierarchy is not balanced: {0}")]
    Unbalanced(String),

    #[error("level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("constraint matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("constraints are infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge within {0} iterations")]
    NonConvergence(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown series id '{0}'")]
    UnknownSeries(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing data: {0}")]
    Missing(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures that come out of the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::RankDeficient(_)
                | Error::Infeasible(_)
                | Error::NonConvergence(_)
                | Error::Degenerate(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
