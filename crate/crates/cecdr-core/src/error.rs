use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// config errors exit 2, input errors exit 3, divergence exits 4.
#[derive(Debug, Error)]
pub enum CecdrError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("missing gradient for parameter '{0}'")]
    MissingGrad(String),

    #[error("unknown parameter '{0}'")]
    UnknownParam(String),

    #[error("item {item} not present in {space} embedding table")]
    MissingItem { item: u32, space: &'static str },

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CecdrError>;

impl CecdrError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CecdrError::Config(_) => 2,
            CecdrError::Input(_) | CecdrError::Io { .. } | CecdrError::MissingItem { .. } => 3,
            CecdrError::Divergence(_) => 4,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CecdrError::Io { path: path.into(), source }
    }
}
