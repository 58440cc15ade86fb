//! Batch evaluation over a dataset.

use std::collections::BTreeMap;

use noisykag_core::inference::{marginal_response_logprob, respond, score_pool};
use noisykag_core::metrics::{knowledge_f1, p_at_k, unigram_f1, PerplexityAccumulator};
use noisykag_core::selector::top_k_select;
use noisykag_core::{Encoder, Error as CoreError, Generator, LogDistribution, ProjectionPair};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{MissingG, Mode, RunConfig};
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};

pub const REPORT_VERSION: &str = "noisykag.eval/1";

/// Distributions behind a record's decision, keyed by candidate id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub retained: Vec<String>,
    pub raw_scores: BTreeMap<String, f64>,
    pub prior: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub likelihoods: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub id: String,
    pub final_id: String,
    /// Retained ids, best first.
    pub ranking: Vec<String>,
    pub response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_at_1: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_at_k: Option<u8>,
    pub unigram_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge_f1: Option<f64>,
    /// `log P(r|h)` of the reference under the selection distribution.
    pub reference_logprob: f64,
    pub reference_tokens: usize,
    pub ppl: f64,
    pub used_generated_knowledge: bool,
    pub trace: TraceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMetrics {
    pub examples: usize,
    pub failed: usize,
    /// Records carrying a gold id.
    pub labelled: usize,
    pub p_at_1: Option<f64>,
    pub p_at_k: Option<f64>,
    pub unigram_f1: Option<f64>,
    pub knowledge_f1: Option<f64>,
    pub ppl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub config: RunConfig,
    pub corpus: CorpusMetrics,
    /// Sorted by record id.
    pub examples: Vec<ExampleRow>,
    pub failures: Vec<Failure>,
}

fn probs_map(d: &LogDistribution) -> BTreeMap<String, f64> {
    d.ids.iter().cloned().zip(d.probs()).collect()
}

/// Up-front check that every record can run under the configured mode.
pub fn check_dataset(records: &[DatasetRecord], cfg: &RunConfig) -> Result<()> {
    if cfg.mode == Mode::ReweighPosterior && cfg.missing_g == MissingG::Error {
        if let Some(r) = records.iter().find(|r| r.generated_knowledge.is_none()) {
            return Err(Error::Config(format!(
                "record {:?} has no generated_knowledge; reweigh_posterior needs it (or missing_g = \"prior\")",
                r.id
            )));
        }
    }
    Ok(())
}

/// Evaluates one record.
pub fn eval_record(
    rec: &DatasetRecord,
    cfg: &RunConfig,
    proj: &ProjectionPair,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
) -> noisykag_core::Result<ExampleRow> {
    let hyper = &cfg.hyper;
    hyper.validate()?;
    let reference = rec.reference_tokens();
    if reference.is_empty() {
        return Err(CoreError::invalid("record", "reference response has no tokens"));
    }
    let (selection_dist, ranking, final_id, response, trace, used_g) = match cfg.mode {
        Mode::Baseline | Mode::NoisyTrain => {
            let scored = score_pool(&rec.history, &rec.candidates, proj, encoder)?;
            let sel = top_k_select(&scored.scores, hyper.k)?;
            let final_id = sel.retained[0].clone();
            let z = &rec.candidates.candidates[sel.pool_index[0]];
            let response = generator
                .greedy(&rec.history, &z.text, generator.max_len())
                .map_err(|source| CoreError::Backend {
                    id: z.id.clone(),
                    source,
                })?;
            let trace = TraceSummary {
                retained: sel.retained.clone(),
                raw_scores: sel.raw_scores.clone(),
                prior: probs_map(&sel.prior),
                similarity: None,
                refined: None,
                likelihoods: None,
                posterior: None,
            };
            (sel.prior.clone(), sel.retained.clone(), final_id, response, trace, false)
        }
        Mode::ReweighPosterior => {
            let g = match (&rec.generated_knowledge, cfg.missing_g) {
                (Some(g), _) => Some(g),
                (None, MissingG::Prior) => None,
                (None, MissingG::Error) => {
                    return Err(CoreError::invalid("record", "generated_knowledge is missing"))
                }
            };
            let t = respond(&rec.history, &rec.candidates, g, proj, encoder, generator, hyper)?;
            let trace = TraceSummary {
                retained: t.selection.retained.clone(),
                raw_scores: t.selection.raw_scores.clone(),
                prior: probs_map(&t.prior),
                similarity: Some(probs_map(&t.similarity)),
                refined: Some(probs_map(&t.refined)),
                likelihoods: Some(t.likelihoods.clone()),
                posterior: Some(probs_map(&t.posterior)),
            };
            let ranking = t.ranking();
            (t.posterior, ranking, t.final_id, t.final_response, trace, g.is_some())
        }
    };
    let seq: BTreeMap<String, f64> = selection_dist
        .ids
        .iter()
        .map(|id| {
            let text = &rec.candidates.get(id).expect("retained id is in the pool").text;
            generator
                .sequence_logprob(&rec.history, text, &reference)
                .map(|lp| (id.clone(), lp))
                .map_err(|source| CoreError::Backend {
                    id: id.clone(),
                    source,
                })
        })
        .collect::<noisykag_core::Result<_>>()?;
    let reference_logprob = marginal_response_logprob(&selection_dist, &seq)?;
    let response_text = response.text();
    let gold = rec.gold_knowledge_id.as_deref();
    Ok(ExampleRow {
        id: rec.id.clone(),
        p_at_1: gold.map(|g| p_at_k(&ranking, g, 1)).transpose()?,
        p_at_k: gold.map(|g| p_at_k(&ranking, g, hyper.k)).transpose()?,
        unigram_f1: unigram_f1(&response_text, &rec.reference_response).f1,
        knowledge_f1: rec.gold_text().map(|t| knowledge_f1(&response_text, t).f1),
        ppl: noisykag_core::metrics::perplexity(reference_logprob, reference.len())?,
        reference_logprob,
        reference_tokens: reference.len(),
        final_id,
        ranking,
        response: response_text,
        used_generated_knowledge: used_g,
        trace,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn corpus_metrics(rows: &[ExampleRow], failed: usize) -> CorpusMetrics {
    let mut acc = PerplexityAccumulator::default();
    for r in rows {
        acc.add(r.reference_logprob, r.reference_tokens);
    }
    CorpusMetrics {
        examples: rows.len() + failed,
        failed,
        labelled: rows.iter().filter(|r| r.p_at_1.is_some()).count(),
        p_at_1: mean(rows.iter().filter_map(|r| r.p_at_1).map(f64::from)),
        p_at_k: mean(rows.iter().filter_map(|r| r.p_at_k).map(f64::from)),
        unigram_f1: mean(rows.iter().map(|r| r.unigram_f1)),
        knowledge_f1: mean(rows.iter().filter_map(|r| r.knowledge_f1)),
        ppl: acc.value().ok(),
    }
}

pub(crate) fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Evaluates every record. Per-record failures are collected in the report;
/// the output does not depend on the number of threads.
pub fn run_eval(
    records: &[DatasetRecord],
    cfg: &RunConfig,
    proj: &ProjectionPair,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
) -> Result<EvalReport> {
    cfg.validate()?;
    check_dataset(records, cfg)?;
    if proj.input_dim() != encoder.dim() {
        return Err(Error::Config(format!(
            "projections expect {}-d embeddings, encoder has {}",
            proj.input_dim(),
            encoder.dim()
        )));
    }
    let results: Vec<std::result::Result<ExampleRow, Failure>> = thread_pool(cfg.parallelism)?.install(|| {
        records
            .par_iter()
            .map(|r| {
                eval_record(r, cfg, proj, encoder, generator).map_err(|e| Failure {
                    id: r.id.clone(),
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    failures.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(EvalReport {
        version: REPORT_VERSION.into(),
        mode: cfg.mode,
        seed: cfg.hyper.seed,
        config: cfg.clone(),
        corpus: corpus_metrics(&rows, failures.len()),
        examples: rows,
        failures,
    })
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let c = &self.corpus;
        let f = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "mode {}  examples {}  failed {}  P@1 {}  P@K {}  F1 {}  KF1 {}  PPL {}",
            self.mode.as_str(),
            c.examples,
            c.failed,
            f(c.p_at_1),
            f(c.p_at_k),
            f(c.unigram_f1),
            f(c.knowledge_f1),
            f(c.ppl),
        )
    }
}
