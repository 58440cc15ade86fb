//! Knowledge selection and posterior reweighing for knowledge-grounded dialogue.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs: the dual-encoder relevance score and top-K prior,
//! the similarity/refined/posterior distributions used at inference time,
//! Gumbel-TopK perturbation for noisy training, the gradient of the marginal
//! response likelihood with respect to the selector projections, and the
//! evaluation metrics.
//!
//! Model backends are abstracted behind [`backend::Encoder`] and
//! [`backend::Generator`]; [`toy`] provides small deterministic
//! implementations so every quantity can be checked by hand.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backend;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod prob;
pub mod rng;
pub mod selector;
pub mod text;
pub mod toy;
pub mod training;

pub use backend::{BackendError, Encoder, Generator};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{
    CandidatePool, DialogueHistory, GeneratedKnowledge, HyperParams, KnowledgeCandidate,
    KnowledgeSource, Response, Speaker, Turn,
};
pub use prob::LogDistribution;
pub use rng::RngStream;
pub use selector::{ProjectionPair, SelectionResult};

/// Reserved end-of-sequence token.
pub const EOS: &str = "</s>";
