use thiserror::Error;

/// Errors raised anywhere in the classification kernel.
///
/// Variants are grouped into classes (dimension, numeric, config, data, ...)
/// so front-ends can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("head for task `{0}` is disabled")]
    HeadDisabled(String),

    #[error("unsupported head variant: {0}")]
    UnsupportedVariant(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("checkpoint load error: {0}")]
    Load(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse error classes used by the command-line front-end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Config,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numeric(_) => ErrorClass::Numeric,
            Error::Config(_)
            | Error::Dimension(_)
            | Error::HeadDisabled(_)
            | Error::UnsupportedVariant(_)
            | Error::Inference(_)
            | Error::Graph(_)
            | Error::Index(_) => ErrorClass::Config,
            Error::Data(_) | Error::Parse { .. } | Error::Decode(_) | Error::Evaluation(_) | Error::Load(_) | Error::Io(_) => ErrorClass::Data,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
