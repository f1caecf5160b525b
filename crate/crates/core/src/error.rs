use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("select called with an empty candidate set")]
    EmptyCandidates,

    #[error("context dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("policy requires a context vector but none was supplied")]
    MissingContext,

    #[error("posterior covariance of arm {arm} is not positive definite")]
    NotPositiveDefinite { arm: usize },

    #[error("unknown user: {0}")]
    UnknownUser(String),

    #[error("unknown exercise: {0}")]
    UnknownExercise(String),

    #[error("missing learner profiles for users: {}", .0.join(", "))]
    MissingProfiles(Vec<String>),

    #[error("replay invariant violated: {0}")]
    Invariant(String),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
