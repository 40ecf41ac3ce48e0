use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("scale matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("degenerate mixing weights: s_inv_lambda * s_lambda - n^2 = {gap:e}")]
    DegenerateMixing { gap: f64 },
    #[error("singular linear system (condition estimate {condition:e}): {context}")]
    Singular { condition: f64, context: String },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
