use thiserror::Error;

use crate::bilevel::SearchTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation ran before the state it depends on was produced,
    /// e.g. a backward pass without a cached forward distribution.
    #[error("invalid state: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    /// The search produced a non-finite loss. The trace holds every epoch
    /// that completed before the abort.
    #[error("non-finite loss at epoch {epoch}, step {step} ({phase})")]
    NonFinite {
        epoch: usize,
        step: usize,
        phase: &'static str,
        trace: Box<SearchTrace>,
    },

    #[error("epoch {epoch}: {source}")]
    Epoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_epoch(self, epoch: usize) -> Self {
        match self {
            e @ (Error::NonFinite { .. } | Error::Epoch { .. }) => e,
            other => Error::Epoch {
                epoch,
                source: Box::new(other),
            },
        }
    }

    /// True when the error, possibly wrapped in epoch context, is a
    /// non-finite loss abort.
    pub fn is_non_finite(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::Epoch { source, .. } => source.is_non_finite(),
            _ => false,
        }
    }

    /// Epochs completed before a non-finite abort.
    pub fn partial_trace(&self) -> Option<&SearchTrace> {
        match self {
            Error::NonFinite { trace, .. } => Some(trace),
            Error::Epoch { source, .. } => source.partial_trace(),
            _ => None,
        }
    }
}
