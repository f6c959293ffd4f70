use alloc::string::String;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("input too short: length {len}, need at least {min}")]
    InputTooShort { len: usize, min: usize },
    #[error("degenerate embedding: ROI {roi} has a zero-norm latent value")]
    DegenerateEmbedding { roi: usize },
    #[error("time grid is not strictly increasing at index {index}")]
    Grid { index: usize },
    #[error("integration produced a non-finite state at t = {time}")]
    Divergence { time: f64 },
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("function evaluation returned a non-finite value at coordinate {index}")]
    Evaluation { index: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
