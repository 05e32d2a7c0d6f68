use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("singular pivot at step {step} (index {index}, pivot {pivot:e})")]
    SingularPivot { step: usize, index: usize, pivot: f64 },
    #[error("no convergence after {iters} iterations (last change {residual:e})")]
    NoConvergence {
        iters: usize,
        residual: f64,
        best: Vec<f64>,
    },
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("size guard exceeded: {0}")]
    Guard(String),
    #[error("numerical breakdown: {0}")]
    Breakdown(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
