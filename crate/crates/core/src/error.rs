use thiserror::Error;

/// Errors raised anywhere in the compression pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("invalid synthetic stream spec: {0}")]
    Spec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("resource limit exceeded with ranks {ranks:?}: {message}")]
    Resource { message: String, ranks: Vec<usize> },

    #[error("increment {index}: {source}")]
    AtIncrement {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_increment(self, index: usize) -> Self {
        Error::AtIncrement {
            index,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 usage, 2 data, 3 numeric, 4 resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Spec(_) => 1,
            Error::Numeric(_) => 3,
            Error::Resource { .. } => 4,
            Error::AtIncrement { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
