//! Grid search over the similarity temperature and posterior exponent.

use noisykag_core::{Encoder, Generator, ProjectionPair};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::eval::run_eval;

pub const GRID_VERSION: &str = "noisykag.grid/1";

pub fn default_alphas() -> Vec<f64> {
    (1..=10).map(f64::from).collect()
}

pub fn default_betas() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub unigram_f1: Option<f64>,
    pub knowledge_f1: Option<f64>,
    pub p_at_1: Option<f64>,
    pub ppl: Option<f64>,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub version: String,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Alpha-major, both axes ascending.
    pub cells: Vec<GridCell>,
    pub best: Option<GridCell>,
}

fn sorted(mut xs: Vec<f64>, name: &str) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::Config(format!("{name} grid is empty")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{name} grid has a non-finite value")));
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    Ok(xs)
}

/// Highest unigram F1; ties go to the lower alpha, then the lower beta.
pub fn best_cell(cells: &[GridCell]) -> Option<&GridCell> {
    let mut best: Option<&GridCell> = None;
    for c in cells {
        let Some(f) = c.unigram_f1 else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bf = b.unigram_f1.expect("best has a score");
                f > bf || (f == bf && (c.alpha, c.beta) < (b.alpha, b.beta))
            }
        };
        if better {
            best = Some(c);
        }
    }
    best
}

pub fn grid_search(
    records: &[DatasetRecord],
    alphas: Vec<f64>,
    betas: Vec<f64>,
    cfg: &RunConfig,
    proj: &ProjectionPair,
    encoder: &dyn Encoder,
    generator: &dyn Generator,
) -> Result<GridReport> {
    let alphas = sorted(alphas, "alpha")?;
    let betas = sorted(betas, "beta")?;
    let mut cells = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in &alphas {
        for &beta in &betas {
            let mut point = cfg.clone();
            point.mode = Mode::ReweighPosterior;
            point.hyper.alpha = alpha;
            point.hyper.beta = beta;
            let report = run_eval(records, &point, proj, encoder, generator)?;
            let c = report.corpus;
            cells.push(GridCell {
                alpha,
                beta,
                unigram_f1: c.unigram_f1,
                knowledge_f1: c.knowledge_f1,
                p_at_1: c.p_at_1,
                ppl: c.ppl,
                failed: c.failed,
            });
        }
    }
    let best = best_cell(&cells).cloned();
    Ok(GridReport {
        version: GRID_VERSION.into(),
        seed: cfg.hyper.seed,
        alphas,
        betas,
        cells,
        best,
    })
}

impl GridReport {
    /// Unigram F1 with alphas down and betas across.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:>6}", "α\\β");
        for b in &self.betas {
            out.push_str(&format!(" {b:>7.2}"));
        }
        out.push('\n');
        for (i, a) in self.alphas.iter().enumerate() {
            out.push_str(&format!("{a:>6.2}"));
            for j in 0..self.betas.len() {
                let c = &self.cells[i * self.betas.len() + j];
                match c.unigram_f1 {
                    Some(f) => out.push_str(&format!(" {f:>7.4}")),
                    None => out.push_str(&format!(" {:>7}", "-")),
                }
            }
            out.push('\n');
        }
        if let Some(b) = &self.best {
            out.push_str(&format!(
                "best α={} β={} unigram F1 {:.4}\n",
                b.alpha,
                b.beta,
                b.unigram_f1.unwrap_or(f64::NAN)
            ));
        }
        out
    }
}
