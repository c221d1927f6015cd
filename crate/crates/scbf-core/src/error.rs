//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An integration step produced a non-finite state. Callers treat the
    /// trajectory as having left the safe set at that step.
    #[error("numerical blowup: non-finite state produced by an integration step")]
    NumericalBlowup { state: Vec<f64> },

    /// Controller-side code asked for the diffusion field of a model whose
    /// diffusion is hidden.
    #[error("visibility violation: the diffusion field of this model is hidden from controllers")]
    VisibilityViolation,

    /// A state expected to lie in the interior of the safe set does not.
    #[error("state is outside the interior of the safe set (h(x) = {h})")]
    OutsideSafeSet { h: f64 },

    /// Every transition sampled at a point blew up, so no estimate exists.
    #[error("no valid transition samples at point {point_index} ({attempted} attempted)")]
    NoValidSamples { point_index: usize, attempted: usize },

    /// Invalid configuration; `field` names the offending entry.
    #[error("invalid configuration: {field}: {message}")]
    ConfigError { field: String, message: String },

    /// A persisted artifact failed to parse.
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::ConfigError {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::ParseError {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
