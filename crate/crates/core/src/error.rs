use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("reducible transition matrix: {0}")]
    Reducible(String),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("not in row space: {0}")]
    NotInRowSpace(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("root selection failed: {0}")]
    RootSelection(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short category label, used by the CLI to classify failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidParams(_) => "invalid-params",
            Error::EnumerationTooLarge(_) => "enumeration-too-large",
            Error::Unsupported(_) => "unsupported",
            Error::Reducible(_) => "reducible",
            Error::IllConditioned(_) => "ill-conditioned",
            Error::RankDeficient(_) => "rank-deficient",
            Error::NotInRowSpace(_) => "not-in-row-space",
            Error::MissingData(_) => "missing-data",
            Error::RootSelection(_) => "root-selection",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
