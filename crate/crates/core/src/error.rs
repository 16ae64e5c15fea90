use thiserror::Error;

use crate::rgid::VarietyId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unknown variety {0}")]
    NotFound(VarietyId),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot extract feature `{feature}`: {reason}")]
    Extraction { feature: String, reason: String },

    #[error("feature coverage error: {0}")]
    Coverage(String),

    #[error("cascade configuration error: {0}")]
    Config(String),

    #[error("clock regressed: t_now={now_ms}ms is before {latest_ms}ms")]
    Clock { now_ms: u64, latest_ms: u64 },

    #[error("no feature vector stored for sample `{0}`")]
    Join(String),

    #[error("credential payload truncated: {0}")]
    Truncated(String),

    #[error("unsupported credential version {0}")]
    Version(u8),

    #[error("credential digest mismatch")]
    DigestMismatch,

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("unknown grading standard `{0}`")]
    UnknownStandard(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("decision trace is unresolved")]
    Unresolved,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
