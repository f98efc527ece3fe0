//! Error type shared by the core modules.

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Invalid configuration value (non-positive bitrate, MTU below header size, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Inconsistent wire data across packets of one frame.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Byte buffer does not decode as a wire message.
    #[error("framing error: {0}")]
    Framing(String),
    /// Estimator bookkeeping misuse (time before epoch, double finalize).
    #[error("accounting error: {0}")]
    Accounting(String),
    /// Frame arrived for a stream the edge does not know.
    #[error("routing error: {0}")]
    Routing(String),
    /// Scenario failed load-time validation.
    #[error("validation error: {0}")]
    Validation(String),
    /// Bug guard: broken invariant inside the engine (non-monotone clock, ...).
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;
