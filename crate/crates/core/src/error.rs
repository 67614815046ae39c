use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("weighted design is rank deficient (reciprocal condition {rcond:.3e})")]
    RankDeficient { rcond: f64 },

    #[error("degenerate candidate: {0}")]
    DegenerateCandidate(String),

    #[error("scale estimate is zero")]
    ZeroScale,

    #[error("IRLS did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("response column `{0}` not found")]
    UnknownResponse(String),

    #[error("no usable data rows")]
    EmptyData,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
