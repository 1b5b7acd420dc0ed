use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unbound leaf `{0}`")]
    UnboundLeaf(String),
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("expected a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("power iteration did not converge (residual {residual:e})")]
    PowerIteration { residual: f64 },
    #[error("transport solver did not converge: {0}")]
    Solver(String),
    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch for `{0}`")]
    Checksum(String),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("output directory is locked: {0}")]
    Locked(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors raised by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteLoss { .. }
                | Error::PowerIteration { .. }
                | Error::Solver(_)
                | Error::NotPsd(_)
        )
    }
}
