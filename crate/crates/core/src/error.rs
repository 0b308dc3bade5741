use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("corrupt format: {0}")]
    CorruptFormat(String),
    #[error("every token in the batch is padding")]
    AllPadding,
    #[error("degenerate teacher features: mean square {0:e} over non-padding positions")]
    DegenerateTeacher(f64),
    #[error("{0} requires teacher outputs")]
    MissingTeacher(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error("at sparsity level {level}: {source}")]
    AtLevel {
        level: f64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptFormat(msg.into())
    }
}
