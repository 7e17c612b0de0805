use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("unknown dataset id {0}")]
    UnknownDataset(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },

    #[error("malformed {what} at byte offset {offset}: {msg}")]
    Malformed {
        what: &'static str,
        offset: u64,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn malformed(what: &'static str, offset: u64, msg: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            offset,
            msg: msg.into(),
        }
    }
}
