use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter design: {0}")]
    InvalidDesign(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error at token {index}: {reason}")]
    Alignment { index: usize, reason: String },

    #[error("{bad} of {total} channels exceed the variance threshold (data too corrupt)")]
    TooManyBadChannels { bad: usize, total: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("test undefined: {0}")]
    UndefinedTest(String),

    #[error("fold {fold} diverged at epoch {epoch}: {reason}")]
    Divergence {
        fold: usize,
        epoch: usize,
        reason: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
