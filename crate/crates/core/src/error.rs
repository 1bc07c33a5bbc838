use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Infinite norms are values, not errors: only conditions that prevent a
/// result from being defined at all are reported here.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("kernel is not symmetric: entry ({row}, {col}) differs from its transpose")]
    Asymmetric { row: usize, col: usize },
    #[error("kernel is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e} against largest {max_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64, max_eigenvalue: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailed(String),
    #[error("regularization profile inconclusive: last ratio {last_ratio}, relative change {relative_change:e}")]
    Inconclusive { last_ratio: f64, relative_change: f64 },
    #[error("vector does not belong to the reproducing kernel Hilbert space")]
    NotInRkhs,
    #[error("increment family leaves the stochastic aggregate rkHs at step {step}")]
    NotInRc { step: usize, path: Option<usize> },
    #[error("metric horizon {requested} exceeds grid horizon {available}")]
    HorizonExceeded { requested: usize, available: f64 },
    #[error("norm profile decreases by {violation:e} between exhaustion levels {level} and {next}")]
    MonotonicityViolation { level: usize, next: usize, violation: f64 },
    #[error("structural condition fails: drift outside the stochastic aggregate rkHs at step {step}")]
    StructuralFail { step: usize },
    #[error("strategy `{strategy}` produces negative wealth {wealth:e} on path {path}")]
    NegativeWealth { strategy: String, path: usize, wealth: f64 },
    #[error("tree market admits no strictly positive deflator")]
    NoDeflator,
    #[error("tree market is incomplete at node {node}")]
    Incomplete { node: usize },
    #[error("linear program failed: {0}")]
    LpFail(String),
    #[error("process is not a deflated supermartingale at node {node} under vertex {vertex:?}")]
    NotSupermartingale { node: usize, vertex: Vec<f64>, excess: f64 },
    #[error("integral result carries no drift/martingale split")]
    MissingDecomposition,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
