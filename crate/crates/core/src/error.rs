use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A per-unit, per-period or per-group linear system could not be solved.
    #[error("singular {kind} system at index {index}")]
    Singular { kind: &'static str, index: usize },
    #[error("degenerate factor row at period {t}, block {j}")]
    DegenerateFactor { t: usize, j: usize },
    #[error("outside supported domain: {0}")]
    Domain(String),
    #[error("estimation did not converge: {0}")]
    NotConverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
