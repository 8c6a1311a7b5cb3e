use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    /// A linear system that must be solved is (numerically) singular.
    #[error("rank deficiency{}: {detail}", block.map(|b| format!(" in block {b}")).unwrap_or_default())]
    Rank { block: Option<usize>, detail: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A Gibbs full conditional is not normalizable at the current state.
    #[error("non-normalizable full conditional for coordinate {coordinate}: quadratic coefficient {coefficient} >= 0")]
    NonNormalizable { coordinate: usize, coefficient: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
