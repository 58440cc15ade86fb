//! JSON artifacts: trained projections and loss curves.

use std::path::Path;

use noisykag_core::training::{LossReport, TrainConfig};
use noisykag_core::ProjectionPair;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROJECTIONS_VERSION: &str = "noisykag.projections/1";
pub const LOSS_VERSION: &str = "noisykag.loss/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFile {
    pub version: String,
    pub train: TrainConfig,
    pub projections: ProjectionPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFile {
    pub version: String,
    pub train: TrainConfig,
    pub examples: usize,
    pub per_epoch_nll: Vec<f64>,
}

impl LossFile {
    pub fn new(train: TrainConfig, examples: usize, report: &LossReport) -> Self {
        LossFile {
            version: LOSS_VERSION.into(),
            train,
            examples,
            per_epoch_nll: report.per_epoch_nll.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub fn save_projections(path: impl AsRef<Path>, train: TrainConfig, proj: &ProjectionPair) -> Result<()> {
    write_json(
        path,
        &ProjectionFile {
            version: PROJECTIONS_VERSION.into(),
            train,
            projections: proj.clone(),
        },
    )
}

/// Loads projections and checks they fit an encoder of width `dim`.
pub fn load_projections(path: impl AsRef<Path>, dim: usize) -> Result<ProjectionPair> {
    let path = path.as_ref();
    let file: ProjectionFile = read_json(path)?;
    if file.version != PROJECTIONS_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported projections version {:?}",
            path.display(),
            file.version
        )));
    }
    file.projections
        .validate()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if file.projections.input_dim() != dim {
        return Err(Error::Config(format!(
            "{}: projections expect {}-d embeddings, encoder has {dim}",
            path.display(),
            file.projections.input_dim()
        )));
    }
    Ok(file.projections)
}
