//! Selector training on JSONL records.

use noisykag_core::training::{train, LossReport, TrainConfig, TrainExample};
use noisykag_core::{Encoder, Generator};

use crate::config::RunConfig;
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub report: LossReport,
}

impl TrainOutcome {
    pub fn initial_nll(&self) -> f64 {
        self.report.per_epoch_nll[0]
    }

    pub fn final_nll(&self) -> f64 {
        *self.report.per_epoch_nll.last().expect("at least one epoch")
    }
}

/// Gold labels are never read: records are reduced to history, pool and
/// reference first.
pub fn train_records(
    records: &[DatasetRecord],
    cfg: &RunConfig,
    noisy: bool,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let examples: Vec<TrainExample> = records.iter().map(DatasetRecord::to_train_example).collect();
    let config = cfg.train_config(noisy);
    let report = train(&examples, &config, encoder, generator).map_err(|e| match e {
        noisykag_core::Error::Example { index, source } => {
            Error::Config(format!("training record {:?}: {source}", records[index].id))
        }
        other => Error::Core(other),
    })?;
    Ok(TrainOutcome { config, report })
}
