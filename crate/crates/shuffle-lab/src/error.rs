//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation was handed arguments that violate its
    /// stated preconditions.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A step size puts the closed-form recursion outside its convergent
    /// range; the result would describe a divergent process.
    #[error("divergent step size: gamma * lambda = {gamma_lambda} is not below 2")]
    Divergent { gamma_lambda: f64 },

    /// An exhaustive computation would exceed its enumeration budget.
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    /// An experiment configuration file failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("could not parse config: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
