use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("token {token} at position {position} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange {
        position: usize,
        token: u32,
        vocab: usize,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no supervised positions")]
    NoSupervisedPositions,

    #[error("insufficient tokens: need at least {needed}, got {got}")]
    InsufficientTokens { needed: usize, got: usize },

    #[error("grammar violation at token index {0}")]
    Grammar(usize),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("internal dimension mismatch for: {}", .0.join(", "))]
    DimensionMismatch(Vec<String>),

    #[error("vocabulary mismatch: model has {model}, data has {data}")]
    VocabMismatch { model: usize, data: usize },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("run directory {} is locked by another process", .0.display())]
    Locked(PathBuf),

    #[error("io error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable, machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::TokenOutOfRange { .. } => "token_out_of_range",
            Error::Config(_) => "config",
            Error::NoSupervisedPositions => "no_supervised_positions",
            Error::InsufficientTokens { .. } => "insufficient_tokens",
            Error::Grammar(_) => "grammar",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Format(_) => "format",
            Error::MissingTensor(_) => "missing_tensor",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::VocabMismatch { .. } => "vocab_mismatch",
            Error::EmptyData(_) => "empty_data",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Locked(_) => "locked",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
