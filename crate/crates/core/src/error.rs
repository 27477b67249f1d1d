use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown unit {0}")]
    UnknownUnit(usize),

    #[error("unknown covariate column `{0}`")]
    UnknownCovariate(String),

    #[error("unknown DAG variable `{0}`")]
    UnknownVariable(String),

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(path: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
