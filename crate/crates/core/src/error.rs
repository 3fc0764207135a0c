//! Error taxonomy shared across the pipeline.
//!
//! The CLI maps these onto exit codes: config/input problems are code 2,
//! stage failures (resumable) are code 3, unreachable backends are code 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid experiment configuration or violated precondition that the
    /// caller could have checked (weights not summing to 1, missing paths,
    /// malformed templates, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed runtime input (length mismatches, out-of-range values,
    /// empty inputs where at least one element is required).
    #[error("input error: {0}")]
    Input(String),

    /// A requested feature exists in the interface but is not implemented
    /// (e.g. NearMiss versions other than 1).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A pipeline stage failed mid-run. Run state is preserved; the run can
    /// be resumed after the cause is addressed.
    #[error("stage failure: {0}")]
    Stage(String),

    /// A remote interpretation backend could not be reached or identified.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn stage(msg: impl Into<String>) -> Self {
        Error::Stage(msg.into())
    }

    /// Exit code the CLI reports for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Unsupported(_) => 2,
            Error::Stage(_) | Error::Io(_) => 3,
            Error::BackendUnavailable(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
