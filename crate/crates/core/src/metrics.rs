//! Evaluation metrics: unigram F1, Knowledge F1, P@K, perplexity, majority
//! vote and Fleiss' kappa.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Triple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Triple {
    fn from_counts(overlap: usize, hyp: usize, reference: usize) -> Self {
        match (hyp, reference) {
            (0, 0) => F1Triple {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            },
            (0, _) | (_, 0) => F1Triple {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            },
            _ => {
                let precision = overlap as f64 / hyp as f64;
                let recall = overlap as f64 / reference as f64;
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                F1Triple {
                    precision,
                    recall,
                    f1,
                }
            }
        }
    }
}

/// Token-overlap F1 with clipped multiset counts.
pub fn unigram_f1(hypothesis: &str, reference: &str) -> F1Triple {
    let hyp = normalize_text(hypothesis);
    let refs = normalize_text(reference);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &refs {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0;
    for t in &hyp {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    F1Triple::from_counts(overlap, hyp.len(), refs.len())
}

/// Unigram F1 of a response against the gold knowledge text.
pub fn knowledge_f1(response: &str, gold_knowledge: &str) -> F1Triple {
    unigram_f1(response, gold_knowledge)
}

/// 1 if `gold_id` is among the first `k` ranked ids, else 0.
pub fn p_at_k<S: AsRef<str>>(ranked_ids: &[S], gold_id: &str, k: usize) -> Result<u8> {
    if k < 1 {
        return Err(Error::param("k", "must be >= 1"));
    }
    Ok(u8::from(
        ranked_ids.iter().take(k).any(|id| id.as_ref() == gold_id),
    ))
}

/// `exp(−total_logprob / token_count)`.
pub fn perplexity(total_logprob: f64, token_count: usize) -> Result<f64> {
    if token_count < 1 {
        return Err(Error::param("token_count", "must be >= 1"));
    }
    Ok(libm::exp(-total_logprob / token_count as f64))
}

/// Pools log-probability and token counts across examples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerplexityAccumulator {
    pub total_logprob: f64,
    pub tokens: usize,
}

impl PerplexityAccumulator {
    pub fn add(&mut self, logprob: f64, tokens: usize) {
        self.total_logprob += logprob;
        self.tokens += tokens;
    }

    pub fn value(&self) -> Result<f64> {
        perplexity(self.total_logprob, self.tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vote<L> {
    Label(L),
    NoConsensus,
}

/// Most frequent label; a tie for first place is [`Vote::NoConsensus`].
pub fn majority_vote<L: Ord + Clone>(labels: &[L]) -> Vote<L> {
    let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let Some(&max) = counts.values().max() else {
        return Vote::NoConsensus;
    };
    let mut winners = counts.iter().filter(|(_, &c)| c == max);
    match (winners.next(), winners.next()) {
        (Some((l, _)), None) => Vote::Label((*l).clone()),
        _ => Vote::NoConsensus,
    }
}

/// Item × category assignment counts with a fixed number of raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    counts: Vec<Vec<u32>>,
    raters: u32,
}

impl LabelMatrix {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self> {
        let first = counts
            .first()
            .ok_or_else(|| Error::invalid("label matrix", "needs at least one item"))?;
        let categories = first.len();
        if categories < 2 {
            return Err(Error::invalid("label matrix", "needs at least two categories"));
        }
        let raters: u32 = first.iter().sum();
        if raters < 2 {
            return Err(Error::invalid("label matrix", "needs at least two raters"));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != categories {
                return Err(Error::invalid(
                    "label matrix",
                    format!("item {i} has {} categories, expected {categories}", row.len()),
                ));
            }
            let n: u32 = row.iter().sum();
            if n != raters {
                return Err(Error::invalid(
                    "label matrix",
                    format!("item {i} has {n} ratings, expected {raters}"),
                ));
            }
        }
        Ok(LabelMatrix { counts, raters })
    }

    /// Builds the matrix from per-item label lists over a category list.
    pub fn from_labels<L: PartialEq>(items: &[Vec<L>], categories: &[L]) -> Result<Self> {
        let counts = items
            .iter()
            .map(|labels| {
                categories
                    .iter()
                    .map(|c| labels.iter().filter(|l| *l == c).count() as u32)
                    .collect()
            })
            .collect();
        LabelMatrix::new(counts)
    }

    pub fn raters(&self) -> u32 {
        self.raters
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }
}

/// Fleiss' kappa, `(P̄ − P̄_e) / (1 − P̄_e)`. When every assignment falls in
/// one category, kappa is 1 if every item is unanimous and an error
/// otherwise.
pub fn fleiss_kappa(m: &LabelMatrix) -> Result<f64> {
    let n = f64::from(m.raters);
    let items = m.counts.len() as f64;
    let categories = m.counts[0].len();
    let mut p_bar = 0.0;
    let mut column = alloc::vec![0.0f64; categories];
    for row in &m.counts {
        let sq: f64 = row.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
        p_bar += (sq - n) / (n * (n - 1.0));
        for (j, &c) in row.iter().enumerate() {
            column[j] += f64::from(c);
        }
    }
    p_bar /= items;
    let total = n * items;
    let p_e: f64 = column.iter().map(|c| (c / total) * (c / total)).sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return if (p_bar - 1.0).abs() < 1e-12 {
            Ok(1.0)
        } else {
            Err(Error::DegenerateMarginal)
        };
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}
