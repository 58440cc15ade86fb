//! Clean-vs-noisy selector comparison under injected surface distractors.

use std::collections::BTreeSet;

use noisykag_core::metrics::p_at_k;
use noisykag_core::text::{join_tokens, normalize_text};
use noisykag_core::training::PreparedExample;
use noisykag_core::{Encoder, Generator, KnowledgeCandidate, ProjectionPair, RngStream};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::train::train_records;

pub const PERTURB_VERSION: &str = "noisykag.perturb/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbSettings {
    pub distractors: usize,
    /// History tokens copied into each distractor.
    pub surface_tokens: usize,
}

impl Default for PerturbSettings {
    fn default() -> Self {
        PerturbSettings {
            distractors: 3,
            surface_tokens: 3,
        }
    }
}

/// Adds distractors made of history tokens plus the text of another
/// non-gold candidate. Deterministic in `seed`; each record draws from its
/// own split stream.
pub fn inject_distractors(records: &[DatasetRecord], settings: PerturbSettings, seed: u64) -> Vec<DatasetRecord> {
    let root = RngStream::new(seed);
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut rng = root.split(i as u64);
            let history_tokens: Vec<String> = normalize_text(&rec.history.flat_text())
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let donors: Vec<&KnowledgeCandidate> = rec
                .candidates
                .candidates
                .iter()
                .filter(|c| Some(&c.id) != rec.gold_knowledge_id.as_ref())
                .collect();
            let mut out = rec.clone();
            for j in 0..settings.distractors {
                let mut tokens = Vec::new();
                for _ in 0..settings.surface_tokens.min(history_tokens.len()) {
                    let t = pick(&mut rng, history_tokens.len());
                    tokens.push(history_tokens[t].clone());
                }
                if !donors.is_empty() {
                    let d = donors[pick(&mut rng, donors.len())];
                    tokens.extend(normalize_text(&d.text));
                }
                let mut id = format!("{}~d{j}", rec.id);
                while out.candidates.index_of(&id).is_some() {
                    id.push('~');
                }
                out.candidates
                    .candidates
                    .push(KnowledgeCandidate::new(id, join_tokens(&tokens)));
            }
            out
        })
        .collect()
}

fn pick(rng: &mut RngStream, n: usize) -> usize {
    ((rng.open01() * n as f64) as usize).min(n - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorMetrics {
    /// Over records with a gold id.
    pub p_at_k: Option<f64>,
    /// Mean `−log P(r|h)` under the clean prior.
    pub marginal_nll: f64,
}

pub fn selector_metrics(
    records: &[DatasetRecord],
    proj: &ProjectionPair,
    k: usize,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
) -> Result<SelectorMetrics> {
    if records.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let mut hits = 0usize;
    let mut labelled = 0usize;
    let mut nll = 0.0;
    let mut rng = RngStream::new(0);
    for rec in records {
        let ex = rec.to_train_example();
        let prepared = PreparedExample::prepare(&ex, proj.input_dim(), encoder, generator)?;
        let (loss, internals) = prepared.nll(proj, k, None, &mut rng)?;
        nll += loss;
        if let Some(g) = &rec.gold_knowledge_id {
            labelled += 1;
            hits += usize::from(p_at_k(&internals.selection.retained, g, k)?);
        }
    }
    Ok(SelectorMetrics {
        p_at_k: (labelled > 0).then(|| hits as f64 / labelled as f64),
        marginal_nll: nll / records.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbCell {
    /// `clean` or `noisy`.
    pub arm: String,
    /// `original` or `perturbed`.
    pub test: String,
    pub p_at_k: Option<f64>,
    pub marginal_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub version: String,
    pub seed: u64,
    pub k: usize,
    pub gumbel_scale: f64,
    pub settings: PerturbSettings,
    pub train_examples: usize,
    pub test_examples: usize,
    pub cells: Vec<PerturbCell>,
    /// noisy − clean on the perturbed test set.
    pub p_at_k_difference_perturbed: Option<f64>,
    pub marginal_nll_difference_perturbed: f64,
}

pub fn perturbation_benchmark(
    train_set: &[DatasetRecord],
    test_set: &[DatasetRecord],
    settings: PerturbSettings,
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
) -> Result<PerturbReport> {
    let clean = train_records(train_set, cfg, false, encoder, generator)?;
    let noisy = train_records(train_set, cfg, true, encoder, generator)?;
    let perturbed = inject_distractors(test_set, settings, cfg.hyper.seed);
    let k = cfg.hyper.k;
    let mut cells = Vec::with_capacity(4);
    for (arm, outcome) in [("clean", &clean), ("noisy", &noisy)] {
        for (test, data) in [("original", test_set), ("perturbed", perturbed.as_slice())] {
            let m = selector_metrics(data, &outcome.report.final_projections, k, encoder, generator)?;
            cells.push(PerturbCell {
                arm: arm.into(),
                test: test.into(),
                p_at_k: m.p_at_k,
                marginal_nll: m.marginal_nll,
            });
        }
    }
    let (c, n) = (&cells[1], &cells[3]);
    Ok(PerturbReport {
        version: PERTURB_VERSION.into(),
        seed: cfg.hyper.seed,
        k,
        gumbel_scale: cfg.hyper.gumbel_scale,
        settings,
        train_examples: train_set.len(),
        test_examples: test_set.len(),
        p_at_k_difference_perturbed: n.p_at_k.zip(c.p_at_k).map(|(a, b)| a - b),
        marginal_nll_difference_perturbed: n.marginal_nll - c.marginal_nll,
        cells,
    })
}

impl PerturbReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<6}  {:<9}  {:>8}  {:>12}\n", "arm", "test", "P@K", "marginal NLL");
        for c in &self.cells {
            let p = c.p_at_k.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
            out.push_str(&format!("{:<6}  {:<9}  {:>8}  {:>12.4}\n", c.arm, c.test, p, c.marginal_nll));
        }
        if let Some(d) = self.p_at_k_difference_perturbed {
            out.push_str(&format!("noisy - clean, perturbed P@K: {d:+.4}\n"));
        }
        out
    }
}
