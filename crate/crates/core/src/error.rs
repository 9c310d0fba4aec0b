use std::path::PathBuf;

/// Errors produced by the toolkit. Variants map one-to-one onto the failure
/// classes the CLI reports (all of them are "data errors", exit code 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("residual has zero energy; spectral score undefined")]
    ZeroResidual,

    #[error("auxiliary copies need independent seeds, got {0} twice")]
    SeedCollision(u64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("criterion not applicable to this channel layout: {0}")]
    Channel(String),

    #[error("provenance check failed: {0}")]
    Provenance(String),

    #[error("missing metadata: {0}")]
    Metadata(String),

    #[error("operator has no analytic smallest gain: {0}")]
    UnsupportedOperator(String),

    #[error("corrupt bundle at {path}: {reason}")]
    CorruptBundle { path: PathBuf, reason: String },

    #[error("unsupported bundle version {0} (expected 1)")]
    Version(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
