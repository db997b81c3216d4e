use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid document {id:?}: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error(
        "base rate {target} is unreachable by removing negative documents; \
         the maximum achievable rate is {max_achievable}"
    )]
    UnreachableBaseRate { target: f64, max_achievable: f64 },

    #[error("training data has a single class ({0}); both positive and negative examples are required")]
    SingleClass(String),

    #[error("no positive labels")]
    NoPositives,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("too few positive documents for {folds}-fold cross-validation: need at least {needed}, found {found}")]
    TooFewPositiveDocuments {
        folds: usize,
        needed: usize,
        found: usize,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Errors caused by bad inputs or configuration rather than by a fault
    /// in the pipeline itself.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_validation(),
            Error::Internal(_) => false,
            _ => true,
        }
    }
}
