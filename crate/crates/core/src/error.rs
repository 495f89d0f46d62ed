use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("ply error in {path}: {msg}")]
    Ply { path: PathBuf, msg: String },

    #[error("{what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty asset")]
    EmptyAsset,

    #[error("degenerate asset: bounding radius is zero")]
    DegenerateAsset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("asset hash mismatch: model was trained on {expected:016x}, got {got:016x}")]
    AssetMismatch { expected: u64, got: u64 },

    #[error("training diverged: non-finite loss at iteration {iteration} (lr = {lr:e})")]
    Diverged { iteration: usize, lr: f64 },

    #[error("scene error: {0}")]
    Scene(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }
}
