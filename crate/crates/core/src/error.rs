use thiserror::Error;

use crate::fpcore::Modality;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inconsistent mask: {0:?} marked present but the window holds no samples for it")]
    InconsistentMask(Modality),

    #[error("insufficient context: buffer has {got} windows, at least {need} required")]
    InsufficientContext { got: usize, need: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("band too narrow: band {band} admits no path between lengths {query_len} and {proto_len}")]
    BandTooNarrow {
        band: usize,
        query_len: usize,
        proto_len: usize,
    },

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("config error in field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("round budget exhausted after {0} rounds")]
    RoundBudgetExhausted(usize),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("privacy check failed: {0}")]
    PrivacyLeak(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param_err(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
