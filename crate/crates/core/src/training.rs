//! Selector training by maximizing the marginal response likelihood.
//!
//! Loss per example is `−log Σ_{z∈Z} P(z|h) P(r|h,z)` over the retained set
//! `Z`, with exact sequence likelihoods of the reference response. The
//! retained set is a per-step constant: no gradient crosses the top-K
//! boundary. Under noisy training, Gumbel noise is added to the scores
//! before the cut and the softmax and is treated as a constant offset.
//!
//! Only the projections train; embeddings and the generator are frozen, so
//! each example's embeddings and per-candidate sequence likelihoods are
//! computed once ([`PreparedExample`]).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{Encoder, Generator};
use crate::error::{Error, Result};
use crate::inference::{marginal_response_logprob, score_pool};
use crate::linalg::Matrix;
use crate::model::{CandidatePool, DialogueHistory, HyperParams, Response};
use crate::prob::LogDistribution;
use crate::rng::RngStream;
use crate::selector::{noisy_top_k, score_candidates, top_k_select, ProjectionPair, Scores, SelectionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub history: DialogueHistory,
    pub pool: CandidatePool,
    /// Reference response tokens; log-probabilities are not needed.
    pub reference: Response,
}

impl TrainExample {
    pub fn validate(&self) -> Result<()> {
        self.history.validate()?;
        self.pool.validate()?;
        if self.reference.is_empty() {
            return Err(Error::invalid("train example", "reference response is empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub k: usize,
    pub noisy: bool,
    pub hyper: HyperParams,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            k: 3,
            noisy: false,
            hyper: HyperParams::default(),
            init_scale: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::param("learning_rate", "must be finite and >= 0"));
        }
        if self.epochs < 1 {
            return Err(Error::param("epochs", "must be >= 1"));
        }
        if self.k < 1 {
            return Err(Error::param("k", "must be >= 1"));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::param("init_scale", "must be finite and >= 0"));
        }
        self.hyper.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Mean NLL over the dataset at the start of each epoch.
    pub per_epoch_nll: Vec<f64>,
    pub final_projections: ProjectionPair,
}

/// Frozen per-example quantities.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub ids: Vec<String>,
    pub history_vec: Vec<f64>,
    pub candidate_vecs: Vec<Vec<f64>>,
    /// `log P(r|h,z)` for every pool candidate, pool order.
    pub seq_logprobs: Vec<f64>,
}

impl PreparedExample {
    pub fn prepare<E, G>(
        ex: &TrainExample,
        dim: usize,
        encoder: &E,
        generator: &G,
    ) -> Result<Self>
    where
        E: Encoder + ?Sized,
        G: Generator + ?Sized,
    {
        ex.validate()?;
        // identity projections only to reuse the embedding path
        let scored = score_pool(&ex.history, &ex.pool, &ProjectionPair::identity(dim), encoder)?;
        let seq_logprobs = ex
            .pool
            .candidates
            .iter()
            .map(|z| {
                generator
                    .sequence_logprob(&ex.history, &z.text, &ex.reference.tokens)
                    .map_err(|source| Error::Backend {
                        id: z.id.clone(),
                        source,
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(PreparedExample {
            ids: ex.pool.ids(),
            history_vec: scored.history_vec,
            candidate_vecs: scored.candidate_vecs,
            seq_logprobs,
        })
    }

    pub fn scores(&self, proj: &ProjectionPair) -> Result<Scores> {
        let values = score_candidates(&self.history_vec, &self.candidate_vecs, proj)?;
        Scores::new(self.ids.clone(), values)
    }

    /// Loss and internals; `noise` carries the Gumbel parameters when
    /// training noisily.
    pub fn nll(
        &self,
        proj: &ProjectionPair,
        k: usize,
        noise: Option<&HyperParams>,
        rng: &mut RngStream,
    ) -> Result<(f64, NllInternals)> {
        let scores = self.scores(proj)?;
        let selection = match noise {
            Some(h) => noisy_top_k(&scores, k, h, rng)?,
            None => top_k_select(&scores, k)?,
        };
        let seq: BTreeMap<String, f64> = selection
            .retained
            .iter()
            .zip(&selection.pool_index)
            .map(|(id, &i)| (id.clone(), self.seq_logprobs[i]))
            .collect();
        let marginal = marginal_response_logprob(&selection.prior, &seq)?;
        let joint: Vec<f64> = selection
            .prior
            .logweights
            .iter()
            .zip(&selection.pool_index)
            .map(|(w, &i)| w + self.seq_logprobs[i])
            .collect();
        let train_posterior =
            LogDistribution::unnormalized(selection.retained.clone(), joint)?.normalize()?;
        let retained_vecs = selection
            .pool_index
            .iter()
            .map(|&i| self.candidate_vecs[i].clone())
            .collect();
        Ok((
            -marginal,
            NllInternals {
                selection,
                train_posterior,
                seq_logprobs: seq,
                history_vec: self.history_vec.clone(),
                retained_vecs,
            },
        ))
    }
}

/// What the backward pass needs from one forward computation.
#[derive(Debug, Clone, PartialEq)]
pub struct NllInternals {
    pub selection: SelectionResult,
    /// `P(z|h,r) ∝ P(z|h) P(r|h,z)` over the retained set.
    pub train_posterior: LogDistribution,
    pub seq_logprobs: BTreeMap<String, f64>,
    pub history_vec: Vec<f64>,
    /// Embeddings of the retained candidates, aligned with `selection.retained`.
    pub retained_vecs: Vec<Vec<f64>>,
}

impl NllInternals {
    pub fn prior(&self) -> &LogDistribution {
        &self.selection.prior
    }
}

/// Negative marginal log-likelihood of the reference response.
#[allow(clippy::too_many_arguments)]
pub fn example_nll<E, G>(
    ex: &TrainExample,
    proj: &ProjectionPair,
    encoder: &E,
    generator: &G,
    k: usize,
    noise: Option<&HyperParams>,
    rng: &mut RngStream,
) -> Result<(f64, NllInternals)>
where
    E: Encoder + ?Sized,
    G: Generator + ?Sized,
{
    PreparedExample::prepare(ex, proj.input_dim(), encoder, generator)?.nll(proj, k, noise, rng)
}

/// `∂(−log P(r|h)) / ∂f_j = P(z_j|h) − P(z_j|h,r)` for each retained id.
pub fn grad_scores(
    prior: &LogDistribution,
    train_posterior: &LogDistribution,
) -> Result<BTreeMap<String, f64>> {
    if !prior.normalized || !train_posterior.normalized {
        return Err(Error::invalid("grad_scores", "inputs must be normalized"));
    }
    let align = prior.alignment(train_posterior)?;
    Ok(prior
        .ids
        .iter()
        .zip(&prior.logweights)
        .zip(&align)
        .map(|((id, &p), &j)| {
            (id.clone(), libm::exp(p) - libm::exp(train_posterior.logweights[j]))
        })
        .collect())
}

/// Chain rule through the bilinear score:
/// `∂f_j/∂W_h = (W_z z_j) hᵀ`, `∂f_j/∂W_z = (W_h h) z_jᵀ`.
pub fn grad_projections(proj: &ProjectionPair, internals: &NllInternals) -> Result<(Matrix, Matrix)> {
    let g = grad_scores(&internals.selection.prior, &internals.train_posterior)?;
    let dim = proj.input_dim();
    if internals.history_vec.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "gradient",
            expected: dim,
            got: internals.history_vec.len(),
        });
    }
    let mut gh = Matrix::zeros(proj.w_h.rows, proj.w_h.cols);
    let mut gz = Matrix::zeros(proj.w_z.rows, proj.w_z.cols);
    let h = &internals.history_vec;
    let wh_h = proj.w_h.mul_vec(h)?;
    for (id, z) in internals.selection.retained.iter().zip(&internals.retained_vecs) {
        let gj = g[id];
        if gj == 0.0 {
            continue;
        }
        let wz_z = proj.w_z.mul_vec(z)?;
        gh.add_outer(gj, &wz_z, h);
        gz.add_outer(gj, &wh_h, z);
    }
    Ok((gh, gz))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Entries compared (|analytic| > threshold, retained set stable).
    pub checked: usize,
    /// Entries skipped because a probe step changed the retained set.
    pub excluded: usize,
}

/// Entries with smaller analytic gradients are not compared.
pub const GRAD_CHECK_MIN: f64 = 1e-8;

/// Central finite differences on every projection entry against the
/// analytic gradient of the clean (noise-free) loss.
pub fn finite_diff_check<E, G>(
    ex: &TrainExample,
    proj: &ProjectionPair,
    encoder: &E,
    generator: &G,
    k: usize,
    eps: f64,
) -> Result<GradCheck>
where
    E: Encoder + ?Sized,
    G: Generator + ?Sized,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("eps", "must be > 0"));
    }
    let prepared = PreparedExample::prepare(ex, proj.input_dim(), encoder, generator)?;
    finite_diff_check_prepared(&prepared, proj, k, eps)
}

pub fn finite_diff_check_prepared(
    prepared: &PreparedExample,
    proj: &ProjectionPair,
    k: usize,
    eps: f64,
) -> Result<GradCheck> {
    let mut rng = RngStream::new(0);
    let (_, base) = prepared.nll(proj, k, None, &mut rng)?;
    let (gh, gz) = grad_projections(proj, &base)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    for which in 0..2 {
        let analytic = if which == 0 { &gh } else { &gz };
        for idx in 0..analytic.data.len() {
            let an = analytic.data[idx];
            let probe = |delta: f64| -> Result<(f64, bool)> {
                let mut p = proj.clone();
                let m = if which == 0 { &mut p.w_h } else { &mut p.w_z };
                m.data[idx] += delta;
                let mut rng = RngStream::new(0);
                let (loss, int) = prepared.nll(&p, k, None, &mut rng)?;
                Ok((loss, int.selection.retained == base.selection.retained))
            };
            let (plus, stable_plus) = probe(eps)?;
            let (minus, stable_minus) = probe(-eps)?;
            if !(stable_plus && stable_minus) {
                report.excluded += 1;
                continue;
            }
            if an.abs() <= GRAD_CHECK_MIN {
                continue;
            }
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
            }
        }
    }
    Ok(report)
}

/// Initial projections for a training run.
pub fn initial_projections(dim: usize, config: &TrainConfig) -> ProjectionPair {
    let mut rng = RngStream::new(config.hyper.seed).split(0);
    ProjectionPair::init(dim, config.init_scale, &mut rng)
}

/// Gradient descent over a fixed example order. Each epoch evaluates every
/// example at the epoch's starting parameters and then applies the
/// per-example steps in order (equivalently, one step along the summed
/// gradient). Noise is drawn from a stream split by epoch and example index.
pub fn train<E, G>(
    dataset: &[TrainExample],
    config: &TrainConfig,
    encoder: &E,
    generator: &G,
) -> Result<LossReport>
where
    E: Encoder + ?Sized,
    G: Generator + ?Sized,
{
    let dim = encoder.dim();
    let init = initial_projections(dim, config);
    let prepared = dataset
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            PreparedExample::prepare(ex, dim, encoder, generator)
                .map_err(|e| Error::Example {
                    index: i,
                    source: alloc::boxed::Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    train_prepared(&prepared, config, init)
}

pub fn train_prepared(
    prepared: &[PreparedExample],
    config: &TrainConfig,
    init: ProjectionPair,
) -> Result<LossReport> {
    config.validate()?;
    if prepared.is_empty() {
        return Err(Error::Empty("training set"));
    }
    init.validate()?;
    let root = RngStream::new(config.hyper.seed);
    let noise = config.noisy.then_some(&config.hyper);
    let mut proj = init;
    let mut per_epoch_nll = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_rng = root.split(epoch as u64 + 1);
        let mut total = 0.0;
        let mut steps = Vec::with_capacity(prepared.len());
        for (i, ex) in prepared.iter().enumerate() {
            let mut rng = epoch_rng.split(i as u64);
            let (loss, internals) = ex.nll(&proj, config.k, noise, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { index: i });
            }
            total += loss;
            steps.push(grad_projections(&proj, &internals)?);
        }
        per_epoch_nll.push(total / prepared.len() as f64);
        for (gh, gz) in &steps {
            proj.w_h.sub_scaled(config.learning_rate, gh);
            proj.w_z.sub_scaled(config.learning_rate, gz);
        }
        if proj.validate().is_err() {
            return Err(Error::invalid(
                "training",
                format!("projections became non-finite in epoch {epoch}"),
            ));
        }
    }
    Ok(LossReport {
        per_epoch_nll,
        final_projections: proj,
    })
}
