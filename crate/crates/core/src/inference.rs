//! Posterior-based reweighing at inference time.
//!
//! The retained candidates' prior `P(z|h)` is multiplied by a similarity
//! distribution `P(z|g)` against generated knowledge `g` and renormalized
//! into the refined distribution `P*(z|h)`. One Bayes update with
//! likelihoods estimated from each candidate's greedy decode (mean token
//! probability) gives the posterior, which is then raised to `beta`.
//!
//! Gold labels are never read here.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{Encoder, Generator};
use crate::error::{Error, Result, StageExt};
use crate::model::{CandidatePool, DialogueHistory, GeneratedKnowledge, HyperParams, KnowledgeCandidate, Response};
use crate::prob::{floored_ln, log_sum_exp, sharpen, LogDistribution, PROB_FLOOR};
use crate::selector::{score_candidates, top_k_select, ProjectionPair, Scores, SelectionResult};

/// Embeddings and relevance scores for one history against its pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPool {
    pub scores: Scores,
    pub history_vec: Vec<f64>,
    /// One per pool candidate, in pool order.
    pub candidate_vecs: Vec<Vec<f64>>,
}

fn check_dims(vecs: &[Vec<f64>], dim: usize) -> Result<()> {
    for v in vecs {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "embedding",
                expected: dim,
                got: v.len(),
            });
        }
    }
    Ok(())
}

fn embed_all<E: Encoder + ?Sized>(encoder: &E, texts: &[&str], dim: usize) -> Result<Vec<Vec<f64>>> {
    let vecs = encoder.embed(texts).map_err(|source| Error::Backend {
        id: String::from("<encoder>"),
        source,
    })?;
    if vecs.len() != texts.len() {
        return Err(Error::DimensionMismatch {
            context: "embedding count",
            expected: texts.len(),
            got: vecs.len(),
        });
    }
    check_dims(&vecs, dim)?;
    Ok(vecs)
}

/// Embeds the history and every candidate and scores them with
/// `(W_h E(h))ᵀ(W_z E(z))`.
pub fn score_pool<E: Encoder + ?Sized>(
    history: &DialogueHistory,
    pool: &CandidatePool,
    proj: &ProjectionPair,
    encoder: &E,
) -> Result<ScoredPool> {
    let flat = history.flat_text();
    let mut texts: Vec<&str> = Vec::with_capacity(pool.len() + 1);
    texts.push(&flat);
    texts.extend(pool.candidates.iter().map(|c| c.text.as_str()));
    let mut vecs = embed_all(encoder, &texts, proj.input_dim())?;
    let history_vec = vecs.remove(0);
    let values = score_candidates(&history_vec, &vecs, proj)?;
    Ok(ScoredPool {
        scores: Scores::new(pool.ids(), values)?,
        history_vec,
        candidate_vecs: vecs,
    })
}

/// `P(z|g)` from precomputed vectors: softmax of `f(g, z) / alpha`.
pub fn similarity_from_vectors(
    g_vec: &[f64],
    ids: Vec<String>,
    z_vecs: &[Vec<f64>],
    proj: &ProjectionPair,
    alpha: f64,
) -> Result<LogDistribution> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be > 0, got {alpha}")));
    }
    if ids.is_empty() {
        return Err(Error::Empty("retained candidates"));
    }
    let f = score_candidates(g_vec, z_vecs, proj)?;
    let logits: Vec<f64> = f.iter().map(|x| x / alpha).collect();
    LogDistribution::from_logits(ids, &logits)
}

/// `P(z|g)` over the retained candidates; `g` goes through the history-side
/// projection.
pub fn similarity_distribution<E: Encoder + ?Sized>(
    g: &GeneratedKnowledge,
    retained: &[&KnowledgeCandidate],
    proj: &ProjectionPair,
    encoder: &E,
    alpha: f64,
) -> Result<LogDistribution> {
    if retained.is_empty() {
        return Err(Error::Empty("retained candidates"));
    }
    let mut texts: Vec<&str> = Vec::with_capacity(retained.len() + 1);
    texts.push(&g.text);
    texts.extend(retained.iter().map(|c| c.text.as_str()));
    let mut vecs = embed_all(encoder, &texts, proj.input_dim())?;
    let g_vec = vecs.remove(0);
    let ids = retained.iter().map(|c| c.id.clone()).collect();
    similarity_from_vectors(&g_vec, ids, &vecs, proj, alpha)
}

/// `P*(z|h) ∝ P(z|h)·P(z|g)`, normalized over the retained set, in the
/// prior's id order.
pub fn refine(prior: &LogDistribution, similarity: &LogDistribution) -> Result<LogDistribution> {
    let align = prior.alignment(similarity)?;
    let sum: Vec<f64> = prior
        .logweights
        .iter()
        .zip(&align)
        .map(|(p, &j)| p + similarity.logweights[j])
        .collect();
    LogDistribution::unnormalized(prior.ids.clone(), sum)?.normalize()
}

/// Arithmetic mean of token probabilities, `(1/N) Σ_i P(r̄_i | ...)`.
pub fn mean_token_prob(resp: &Response) -> Result<f64> {
    let lps = resp.token_logprobs.as_ref().ok_or(Error::MissingLogprobs)?;
    if lps.is_empty() {
        return Err(Error::Empty("response"));
    }
    let total: f64 = lps.iter().map(|&l| libm::exp(l)).sum();
    Ok(total / lps.len() as f64)
}

pub type Likelihoods = BTreeMap<String, f64>;

/// Greedy-decodes a response for each retained candidate and records its
/// mean token probability (floored at [`PROB_FLOOR`]).
pub fn approximate_likelihoods<G: Generator + ?Sized>(
    history: &DialogueHistory,
    retained: &[&KnowledgeCandidate],
    generator: &G,
    max_len: usize,
) -> Result<(Likelihoods, BTreeMap<String, Response>)> {
    if retained.is_empty() {
        return Err(Error::Empty("retained candidates"));
    }
    let mut likelihoods = BTreeMap::new();
    let mut decoded = BTreeMap::new();
    for z in retained {
        let resp = generator
            .greedy(history, &z.text, max_len)
            .map_err(|source| Error::Backend {
                id: z.id.clone(),
                source,
            })?;
        resp.validate()?;
        let l = mean_token_prob(&resp)?.max(PROB_FLOOR);
        likelihoods.insert(z.id.clone(), l);
        decoded.insert(z.id.clone(), resp);
    }
    Ok((likelihoods, decoded))
}

fn lookup_likelihoods(ids: &[String], likelihoods: &Likelihoods) -> Result<Vec<f64>> {
    if likelihoods.len() != ids.len() {
        return Err(Error::IdSetMismatch(format!(
            "{} likelihoods for {} ids",
            likelihoods.len(),
            ids.len()
        )));
    }
    ids.iter()
        .map(|id| {
            let l = *likelihoods
                .get(id)
                .ok_or_else(|| Error::IdSetMismatch(format!("no likelihood for {id:?}")))?;
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::NonPositiveLikelihood {
                    id: id.clone(),
                    value: l,
                });
            }
            Ok(l)
        })
        .collect()
}

/// Bayes rule once: `P(z|h,r) ∝ P(r|h,z)·P*(z|h)`.
pub fn bayes_posterior(refined: &LogDistribution, likelihoods: &Likelihoods) -> Result<LogDistribution> {
    if !refined.normalized {
        return Err(Error::invalid("posterior", "refined distribution is not normalized"));
    }
    let ls = lookup_likelihoods(&refined.ids, likelihoods)?;
    let joint: Vec<f64> = refined
        .logweights
        .iter()
        .zip(&ls)
        .map(|(w, &l)| w + floored_ln(l))
        .collect();
    LogDistribution::unnormalized(refined.ids.clone(), joint)?.normalize()
}

/// Bayes posterior raised to `beta` and renormalized.
pub fn posterior(refined: &LogDistribution, likelihoods: &Likelihoods, beta: f64) -> Result<LogDistribution> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param("beta", format!("must be in [0,1], got {beta}")));
    }
    sharpen(&bayes_posterior(refined, likelihoods)?, beta)
}

/// `log Σ_z P(z|h)·P(r|h,z)` from per-candidate sequence log-likelihoods.
pub fn marginal_response_logprob(
    selection: &LogDistribution,
    per_id_response_logprob: &BTreeMap<String, f64>,
) -> Result<f64> {
    if !selection.normalized {
        return Err(Error::invalid("marginal", "selection distribution is not normalized"));
    }
    if per_id_response_logprob.len() != selection.len() {
        return Err(Error::IdSetMismatch(format!(
            "{} response logprobs for {} ids",
            per_id_response_logprob.len(),
            selection.len()
        )));
    }
    let terms: Vec<f64> = selection
        .ids
        .iter()
        .zip(&selection.logweights)
        .map(|(id, w)| {
            per_id_response_logprob
                .get(id)
                .map(|lp| w + lp)
                .ok_or_else(|| Error::IdSetMismatch(format!("no response logprob for {id:?}")))
        })
        .collect::<Result<_>>()?;
    Ok(log_sum_exp(&terms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub selection: SelectionResult,
    pub prior: LogDistribution,
    pub similarity: LogDistribution,
    pub refined: LogDistribution,
    /// Before `beta` sharpening.
    pub bayes_posterior: LogDistribution,
    pub posterior: LogDistribution,
    pub likelihoods: Likelihoods,
    pub decoded: BTreeMap<String, Response>,
    pub final_id: String,
    pub final_response: Response,
}

impl InferenceTrace {
    /// Retained ids ranked by the posterior, ties by pool index.
    pub fn ranking(&self) -> Vec<String> {
        let sel = &self.selection;
        self.posterior
            .ranking_by(|id| sel.pool_index_of(id).unwrap_or(usize::MAX))
    }
}

/// Full inference for one example. Without `g` the similarity factor is
/// uniform, so the refined distribution equals the prior.
pub fn respond<E, G>(
    history: &DialogueHistory,
    pool: &CandidatePool,
    g: Option<&GeneratedKnowledge>,
    proj: &ProjectionPair,
    encoder: &E,
    generator: &G,
    hyper: &HyperParams,
) -> Result<InferenceTrace>
where
    E: Encoder + ?Sized,
    G: Generator + ?Sized,
{
    hyper.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool"));
    }
    let scored = score_pool(history, pool, proj, encoder).stage("score")?;
    let selection = top_k_select(&scored.scores, hyper.k).stage("select")?;
    let retained: Vec<&KnowledgeCandidate> = selection
        .pool_index
        .iter()
        .map(|&i| &pool.candidates[i])
        .collect();
    let similarity = match g {
        Some(g) => {
            let g_vec = embed_all(encoder, &[g.text.as_str()], proj.input_dim())
                .stage("similarity")?
                .remove(0);
            let z_vecs: Vec<Vec<f64>> = selection
                .pool_index
                .iter()
                .map(|&i| scored.candidate_vecs[i].clone())
                .collect();
            similarity_from_vectors(&g_vec, selection.retained.clone(), &z_vecs, proj, hyper.alpha)
                .stage("similarity")?
        }
        None => LogDistribution::uniform(selection.retained.clone()).stage("similarity")?,
    };
    let refined = refine(&selection.prior, &similarity).stage("refine")?;
    let (likelihoods, decoded) =
        approximate_likelihoods(history, &retained, generator, generator.max_len()).stage("likelihood")?;
    let bayes = bayes_posterior(&refined, &likelihoods).stage("posterior")?;
    let post = sharpen(&bayes, hyper.beta).stage("posterior")?;
    let final_id = post
        .argmax_by(|id| selection.pool_index_of(id).unwrap_or(usize::MAX))
        .ok_or(Error::Empty("posterior"))?;
    let final_response = decoded
        .get(&final_id)
        .cloned()
        .ok_or_else(|| Error::IdSetMismatch(format!("no decode for {final_id:?}")))?;
    Ok(InferenceTrace {
        prior: selection.prior.clone(),
        selection,
        similarity,
        refined,
        bayes_posterior: bayes,
        posterior: post,
        likelihoods,
        decoded,
        final_id,
        final_response,
    })
}
