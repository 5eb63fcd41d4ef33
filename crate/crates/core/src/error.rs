use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("input out of domain: {0}")]
    InputDomain(String),

    #[error("unsupported number of measurement settings: {0} (supported: 2, 3, 4, 6, 10, 16)")]
    UnsupportedSettings(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("chain linkage violated: {0}")]
    Linkage(String),

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("duplicate identity: {0}")]
    Duplicate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::InputDomain(msg.into())
    }

    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
