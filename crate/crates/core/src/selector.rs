//! Dual-encoder relevance, top-K prior and Gumbel-perturbed selection.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::HyperParams;
use crate::prob::LogDistribution;
use crate::rng::RngStream;

/// The history-side and knowledge-side linear projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPair {
    pub w_h: Matrix,
    pub w_z: Matrix,
}

impl ProjectionPair {
    pub fn new(w_h: Matrix, w_z: Matrix) -> Result<Self> {
        let p = ProjectionPair { w_h, w_z };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(dim: usize) -> Self {
        ProjectionPair {
            w_h: Matrix::identity(dim),
            w_z: Matrix::identity(dim),
        }
    }

    /// Identity plus independent uniform noise in `[-init_scale, init_scale)`.
    pub fn init(dim: usize, init_scale: f64, rng: &mut RngStream) -> Self {
        let mut p = ProjectionPair::identity(dim);
        for m in [&mut p.w_h, &mut p.w_z] {
            for x in &mut m.data {
                *x += rng.uniform(-init_scale, init_scale);
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.w_h.validate()?;
        self.w_z.validate()?;
        if self.w_h.rows != self.w_z.rows || self.w_h.cols != self.w_z.cols {
            return Err(Error::DimensionMismatch {
                context: "projection pair",
                expected: self.w_h.rows * self.w_h.cols,
                got: self.w_z.rows * self.w_z.cols,
            });
        }
        Ok(())
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.w_h.cols
    }
}

/// `(W_h·h)ᵀ(W_z·z)`.
pub fn relevance(h_vec: &[f64], z_vec: &[f64], proj: &ProjectionPair) -> Result<f64> {
    if h_vec.len() != z_vec.len() {
        return Err(Error::DimensionMismatch {
            context: "relevance",
            expected: h_vec.len(),
            got: z_vec.len(),
        });
    }
    let a = proj.w_h.mul_vec(h_vec)?;
    let b = proj.w_z.mul_vec(z_vec)?;
    Ok(dot(&a, &b))
}

/// Relevance of one query vector against many candidate vectors; projects
/// the query once.
pub fn score_candidates(
    query: &[f64],
    candidates: &[Vec<f64>],
    proj: &ProjectionPair,
) -> Result<Vec<f64>> {
    let a = proj.w_h.mul_vec(query)?;
    candidates
        .iter()
        .map(|z| Ok(dot(&a, &proj.w_z.mul_vec(z)?)))
        .collect()
}

/// Scores in pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl Scores {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: "scores",
                expected: ids.len(),
                got: values.len(),
            });
        }
        Ok(Scores { ids, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.ids.iter().cloned().zip(self.values.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Retained ids, best first.
    pub retained: Vec<String>,
    /// Pool index of each retained id.
    pub pool_index: Vec<usize>,
    /// Softmax over the retained effective scores.
    pub prior: LogDistribution,
    /// Unperturbed scores for the whole pool.
    pub raw_scores: BTreeMap<String, f64>,
    /// Scores that produced the ranking and prior, aligned with `retained`.
    pub effective_scores: Vec<f64>,
}

impl SelectionResult {
    pub fn contains(&self, id: &str) -> bool {
        self.retained.iter().any(|r| r == id)
    }

    /// Pool index for a retained id.
    pub fn pool_index_of(&self, id: &str) -> Option<usize> {
        self.retained
            .iter()
            .position(|r| r == id)
            .map(|i| self.pool_index[i])
    }
}

/// Keeps the `k` best scores (ties to the lower pool index) and normalizes
/// their softmax over the retained set only.
pub fn top_k_select(scores: &Scores, k: usize) -> Result<SelectionResult> {
    if k < 1 {
        return Err(Error::param("k", "must be >= 1"));
    }
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if scores.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores.values[b]
            .total_cmp(&scores.values[a])
            .then(a.cmp(&b))
    });
    order.truncate(k.min(scores.len()));
    let retained: Vec<String> = order.iter().map(|&i| scores.ids[i].clone()).collect();
    let effective: Vec<f64> = order.iter().map(|&i| scores.values[i]).collect();
    let prior = LogDistribution::from_logits(retained.clone(), &effective)?;
    Ok(SelectionResult {
        retained,
        pool_index: order,
        prior,
        raw_scores: scores.to_map(),
        effective_scores: effective,
    })
}

/// Adds independent Gumbel(`mu`, `phi`) noise to every score, in pool order.
/// `phi = 0` returns the scores unchanged.
pub fn gumbel_perturb(scores: &Scores, mu: f64, phi: f64, rng: &mut RngStream) -> Result<Scores> {
    if !(phi.is_finite() && phi >= 0.0) {
        return Err(Error::param("phi", "Gumbel scale must be >= 0"));
    }
    if phi == 0.0 {
        return Ok(scores.clone());
    }
    let values = scores
        .values
        .iter()
        .map(|&s| s + rng.gumbel(mu, phi))
        .collect();
    Ok(Scores {
        ids: scores.ids.clone(),
        values,
    })
}

/// Gumbel-TopK: top-K of the perturbed scores, prior from the perturbed
/// scores, `raw_scores` left clean.
pub fn noisy_top_k(
    scores: &Scores,
    k: usize,
    hyper: &HyperParams,
    rng: &mut RngStream,
) -> Result<SelectionResult> {
    let perturbed = gumbel_perturb(scores, hyper.gumbel_location, hyper.gumbel_scale, rng)?;
    let mut sel = top_k_select(&perturbed, k)?;
    sel.raw_scores = scores.to_map();
    Ok(sel)
}
