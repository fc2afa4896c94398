use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure in {context}: {reason}")]
    Numerical { context: String, reason: String },

    #[error("no fair base fee exists for multiplier {multiplier}: {reason}")]
    NoFairFee { multiplier: f64, reason: String },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.to_string(), reason: reason.into() }
    }

    pub(crate) fn numerical(context: &str, reason: impl Into<String>) -> Self {
        Error::Numerical { context: context.to_string(), reason: reason.into() }
    }

    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::UnknownModel(_) | Error::InvalidParameter { .. } | Error::Grid(_) | Error::Dimension(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
