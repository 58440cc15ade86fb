//! Dataset IO, HTTP backends, configuration and the evaluation, training,
//! grid-search, ablation and perturbation drivers built on
//! [`noisykag_core`].

pub mod ablation;
pub mod backends;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod grid;
pub mod perturb;
pub mod persist;
pub mod remote;
pub mod synth;
pub mod train;

pub use backends::Backends;
pub use config::{BackendKind, MissingG, Mode, Overrides, RunConfig};
pub use dataset::{load_dataset, parse_dataset, DatasetError, DatasetRecord};
pub use error::{Error, Result};
pub use eval::{run_eval, EvalReport};

use noisykag_core::training::initial_projections;
use noisykag_core::ProjectionPair;

/// Projections named by the config, or the seeded initial ones.
pub fn resolve_projections(cfg: &RunConfig, dim: usize) -> Result<ProjectionPair> {
    match &cfg.projections {
        Some(p) => persist::load_projections(p, dim),
        None => Ok(initial_projections(dim, &cfg.train_config(false))),
    }
}
