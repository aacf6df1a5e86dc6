use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("client converged: local gradient is zero")]
    ZeroGradient,

    #[error("degenerate receiver: client {0} has zero projection onto the receive vector")]
    DegenerateReceiver(usize),

    #[error("kernel factorization failed even with jitter {0:e}")]
    Factorization(f64),

    #[error("no convergence guarantee: mu = {0} >= 1")]
    NoConvergence(f64),

    #[error("bound not reached within {0} rounds")]
    Unreachable(usize),

    #[error("missing optimum: the trace carries no distance-to-optimum values")]
    MissingOptimum,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
