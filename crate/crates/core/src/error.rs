use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty vocabulary after preprocessing")]
    EmptyVocabulary,

    #[error("{what} requires at least {needed}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value for {0}")]
    NonFinite(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("{missing} of {expected} expected ids have no embedding (over the 1% limit)")]
    TooManyMissing { missing: usize, expected: usize },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("leakage guard: document {0} still carries a demographic tag")]
    Leakage(String),

    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("optimizer failed to bracket the restricted likelihood maximum (trace: {0:?})")]
    Bracket(Vec<(f64, f64)>),

    #[error("statistic undefined: {0}")]
    Undefined(&'static str),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("stage `{stage}` needs `{artifact}`; run stage `{run_first}` first")]
    MissingArtifact {
        stage: String,
        artifact: String,
        run_first: String,
    },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error(transparent)]
    Annotation(#[from] crate::annotate::AnnotationError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
