use thiserror::Error;

/// Crate-wide error. Variants map 1:1 onto the CLI's machine-readable category codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/shape contract violation (dimension mismatch, bad axis, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// API misuse: backward on a non-scalar, double backward, step before backward, ...
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid data fed to an operation (labels outside {0,1}, degenerate volume, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed on-disk artifact. `offset` is the byte position where parsing failed.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Bad run configuration (unknown variant, k < 2, missing paths, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Training diverged (NaN/inf loss) or a metric is undefined for the inputs.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable category slug used by the CLI error JSON and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Validation(_) => "validation",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
