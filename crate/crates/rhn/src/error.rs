use thiserror::Error;

/// Library-wide error type. `Contract` covers misuse of an API (bad shapes,
/// bad config, bad data); `Numeric` covers runtime numerical failure
/// (NaN/Inf, divergence). The CLI maps these to exit codes 1 and 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation in {context}: {detail}")]
    Contract { context: &'static str, detail: String },

    #[error("numerical failure in {context}: {detail}")]
    Numeric { context: &'static str, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error in {context}: {detail}")]
    Parse { context: &'static str, detail: String },
}

impl Error {
    pub fn contract(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { context, detail: detail.into() }
    }

    pub fn numeric(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric { context, detail: detail.into() }
    }

    pub fn parse(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Parse { context, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
