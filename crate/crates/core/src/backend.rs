//! Model contracts consumed by selection and inference.
//!
//! Implementations must tolerate concurrent calls, hence the `Sync` bounds.

use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{DialogueHistory, Response};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("network failure: {0}")]
    Network(String),
    #[error("HTTP status {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("schema mismatch: {reason}; payload: {excerpt}")]
    Schema { reason: String, excerpt: String },
    #[error("dimension mismatch: expected {expected}, got {got}; payload: {excerpt}")]
    Dimension {
        expected: usize,
        got: usize,
        excerpt: String,
    },
    #[error("token {0:?} is not in the vocabulary")]
    NotInVocab(String),
    #[error("{0}")]
    Other(String),
}

/// Text encoder `E(·)`: fixed-length vectors for arbitrary text.
pub trait Encoder: Sync {
    /// Embedding dimension.
    fn dim(&self) -> usize;

    /// One vector of length [`Encoder::dim`] per input text.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Conditional response generator `P(r | h, z)`.
pub trait Generator: Sync {
    /// Default decode length bound.
    fn max_len(&self) -> usize;

    /// Natural-log probability of each response token given history,
    /// knowledge and the preceding response tokens.
    fn score(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        response: &[String],
    ) -> Result<Vec<f64>, BackendError>;

    /// Greedy decode with per-step log-probabilities.
    fn greedy(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        max_len: usize,
    ) -> Result<Response, BackendError>;

    /// `log P(r | h, z) = Σ_i log P(r_i | h, z, r_<i)`.
    fn sequence_logprob(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        response: &[String],
    ) -> Result<f64, BackendError> {
        Ok(self.score(history, knowledge, response)?.iter().sum())
    }
}

impl<T: Encoder + ?Sized> Encoder for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        (**self).embed(texts)
    }
}

impl<T: Generator + ?Sized> Generator for &T {
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn score(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        response: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        (**self).score(history, knowledge, response)
    }
    fn greedy(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        max_len: usize,
    ) -> Result<Response, BackendError> {
        (**self).greedy(history, knowledge, max_len)
    }
}
