//! Backend construction from a run configuration.

use noisykag_core::toy::{ToyEncoder, ToyGenerator};
use noisykag_core::{Encoder, Generator};

use crate::config::{BackendKind, RunConfig};
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::remote::RemoteClient;

pub struct Backends {
    pub encoder: Box<dyn Encoder>,
    pub generator: Box<dyn Generator>,
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("dim", &self.encoder.dim())
            .field("max_len", &self.generator.max_len())
            .finish()
    }
}

impl Backends {
    /// `datasets` feed the toy corpus when no corpus file is configured.
    pub fn build(cfg: &RunConfig, datasets: &[&[DatasetRecord]]) -> Result<Self> {
        match cfg.backend {
            BackendKind::Toy => {
                let lines = match &cfg.corpus_path {
                    Some(p) => {
                        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                        text.lines().map(str::to_string).collect()
                    }
                    None => corpus_from(datasets),
                };
                Self::toy(cfg, lines)
            }
            BackendKind::Remote => {
                let client = RemoteClient::new(&cfg.remote).map_err(|e| Error::Config(e.to_string()))?;
                Ok(Backends {
                    encoder: Box::new(client.clone()),
                    generator: Box::new(client),
                })
            }
        }
    }

    pub fn toy<I, S>(cfg: &RunConfig, corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let encoder = ToyEncoder::new(cfg.toy_encoder).map_err(|e| Error::Config(e.to_string()))?;
        let generator =
            ToyGenerator::from_corpus(cfg.toy_generator, corpus).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Backends {
            encoder: Box::new(encoder),
            generator: Box::new(generator),
        })
    }
}

/// Every text of every record, one per line.
pub fn corpus_from(datasets: &[&[DatasetRecord]]) -> Vec<String> {
    datasets
        .iter()
        .flat_map(|d| d.iter())
        .flat_map(|r| r.texts())
        .map(str::to_string)
        .collect()
}
