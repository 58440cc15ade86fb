//! Run configuration, read from TOML.
//!
//! ```toml
//! mode = "reweigh_posterior"
//! backend = "toy"
//! missing_g = "error"
//! parallelism = 4
//! corpus_path = "corpus.txt"
//!
//! [hyper]
//! k = 3
//! alpha = 5.0
//! beta = 0.4
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use noisykag_core::toy::{ToyEncoderConfig, ToyGeneratorConfig};
use noisykag_core::training::TrainConfig;
use noisykag_core::HyperParams;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::remote::RemoteConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    /// Top-1 of the clean prior.
    Baseline,
    /// Same inference as baseline; projections are expected to come from
    /// noisy training.
    NoisyTrain,
    /// Posterior reweighing with generated knowledge.
    ReweighPosterior,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::NoisyTrain => "noisy_train",
            Mode::ReweighPosterior => "reweigh_posterior",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    Remote,
}

/// What to do with records lacking generated knowledge under
/// `reweigh_posterior`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MissingG {
    Error,
    /// Fall back to a uniform similarity factor.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_scale: f64,
    pub noisy: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            init_scale: d.init_scale,
            noisy: d.noisy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hyper: HyperParams,
    pub mode: Mode,
    pub backend: BackendKind,
    pub missing_g: MissingG,
    /// Worker threads; 0 picks the number of CPUs.
    pub parallelism: usize,
    pub toy_encoder: ToyEncoderConfig,
    pub toy_generator: ToyGeneratorConfig,
    /// Toy generator corpus, one sequence per line. Without it the corpus
    /// is built from the texts of the datasets in use.
    pub corpus_path: Option<PathBuf>,
    pub remote: RemoteConfig,
    /// Trained projections; without them the seeded initial projections
    /// are used.
    pub projections: Option<PathBuf>,
    pub train: TrainSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: HyperParams::default(),
            mode: Mode::ReweighPosterior,
            backend: BackendKind::Toy,
            missing_g: MissingG::Error,
            parallelism: 0,
            toy_encoder: ToyEncoderConfig::default(),
            toy_generator: ToyGeneratorConfig::default(),
            corpus_path: None,
            remote: RemoteConfig::default(),
            projections: None,
            train: TrainSettings::default(),
        }
    }
}

/// Command-line overrides, applied after the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub k: Option<usize>,
    pub mode: Option<Mode>,
    pub backend: Option<BackendKind>,
    pub missing_g: Option<MissingG>,
    pub projections: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.corpus_path);
        resolve(&mut cfg.projections);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.hyper.seed = v;
        }
        if let Some(v) = o.alpha {
            self.hyper.alpha = v;
        }
        if let Some(v) = o.beta {
            self.hyper.beta = v;
        }
        if let Some(v) = o.k {
            self.hyper.k = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.backend {
            self.backend = v;
        }
        if let Some(v) = o.missing_g {
            self.missing_g = v;
        }
        if let Some(v) = &o.projections {
            self.projections = Some(v.clone());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: noisykag_core::Error| Error::Config(e.to_string());
        self.hyper.validate().map_err(cfg)?;
        self.toy_encoder.validate().map_err(cfg)?;
        self.toy_generator.validate().map_err(cfg)?;
        self.train_config(self.train.noisy).validate().map_err(cfg)?;
        if self.backend == BackendKind::Remote && self.remote.dim < 1 {
            return Err(Error::Config("remote.dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn train_config(&self, noisy: bool) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            k: self.hyper.k,
            noisy,
            hyper: self.hyper,
            init_scale: self.train.init_scale,
        }
    }

    pub fn encoder_dim(&self) -> usize {
        match self.backend {
            BackendKind::Toy => self.toy_encoder.dim,
            BackendKind::Remote => self.remote.dim,
        }
    }
}
