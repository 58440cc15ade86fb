use alloc::string::String;

use crate::backend::BackendError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("id sets differ: {0}")]
    IdSetMismatch(String),
    #[error("likelihood for {id} must be positive, got {value}")]
    NonPositiveLikelihood { id: String, value: f64 },
    #[error("response carries no token log-probabilities")]
    MissingLogprobs,
    #[error("token {0:?} is not in the vocabulary")]
    NotInVocab(String),
    #[error("degenerate marginal: every assignment falls in one category but items disagree")]
    DegenerateMarginal,
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("non-finite loss at example {index}")]
    NonFiniteLoss { index: usize },
    #[error("backend failure for {id}: {source}")]
    Backend { id: String, source: BackendError },
    #[error("example {index}: {source}")]
    Example {
        index: usize,
        source: alloc::boxed::Box<Error>,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    /// Wraps `self` with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
