//! Cumulative ablation: baseline, noisy-trained projections, then posterior
//! reweighing on top.

use noisykag_core::{Encoder, Generator};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::dataset::DatasetRecord;
use crate::error::Result;
use crate::eval::{run_eval, CorpusMetrics};
use crate::train::train_records;

pub const ABLATION_VERSION: &str = "noisykag.ablation/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mode: Mode,
    /// `clean` or `noisy`.
    pub projections: String,
    pub metrics: CorpusMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub version: String,
    pub seed: u64,
    pub gumbel_scale: f64,
    pub train_examples: usize,
    pub eval_examples: usize,
    pub clean_final_nll: f64,
    pub noisy_final_nll: f64,
    pub rows: Vec<AblationRow>,
}

pub fn run_ablation(
    train_set: &[DatasetRecord],
    eval_set: &[DatasetRecord],
    cfg: &RunConfig,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
) -> Result<AblationReport> {
    let clean = train_records(train_set, cfg, false, encoder, generator)?;
    let noisy = train_records(train_set, cfg, true, encoder, generator)?;
    let arms = [
        ("baseline", Mode::Baseline, "clean", &clean),
        ("+ noisy training", Mode::NoisyTrain, "noisy", &noisy),
        ("+ posterior reweighing", Mode::ReweighPosterior, "noisy", &noisy),
    ];
    let mut rows = Vec::with_capacity(arms.len());
    for (label, mode, which, outcome) in arms {
        let mut run = cfg.clone();
        run.mode = mode;
        let report = run_eval(eval_set, &run, &outcome.report.final_projections, encoder, generator)?;
        rows.push(AblationRow {
            label: label.into(),
            mode,
            projections: which.into(),
            metrics: report.corpus,
        });
    }
    Ok(AblationReport {
        version: ABLATION_VERSION.into(),
        seed: cfg.hyper.seed,
        gumbel_scale: cfg.hyper.gumbel_scale,
        train_examples: train_set.len(),
        eval_examples: eval_set.len(),
        clean_final_nll: clean.final_nll(),
        noisy_final_nll: noisy.final_nll(),
        rows,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

impl AblationReport {
    pub fn render_table(&self) -> String {
        let header = ["row", "unigram F1", "knowledge F1", "P@1", "P@K", "PPL", "failed"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                let m = &r.metrics;
                [
                    r.label.clone(),
                    opt(m.unigram_f1),
                    opt(m.knowledge_f1),
                    opt(m.p_at_1),
                    opt(m.p_at_k),
                    opt(m.ppl),
                    m.failed.to_string(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(header.to_vec());
        out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
        for row in &body {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
        }
        out
    }
}
