use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape error: {op} got {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract error: {0}")]
    Contract(String),

    #[error("data error at pair {index}: {message}")]
    Data { index: usize, message: String },

    #[error("non-finite gradient at iteration {iteration}, pair {pair}, parameter `{parameter}`")]
    NonFinite {
        iteration: usize,
        pair: usize,
        parameter: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::DegenerateInput(_) => "degenerate-input",
            Error::Shape { .. } => "shape",
            Error::Contract(_) => "contract",
            Error::Data { .. } => "data",
            Error::NonFinite { .. } => "non-finite",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
