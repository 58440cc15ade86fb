//! Deterministic desk-scale backends.
//!
//! [`ToyEncoder`] is a signed hashed bag-of-words: every normalized token
//! lands in one bucket with a ±1 sign, and the bucket vector is
//! L2-normalized. Shared tokens raise dot products, which is enough
//! structure for relevance and similarity scores to mean something.
//!
//! [`ToyGenerator`] mixes three next-token distributions over a fixed
//! vocabulary: a copy distribution (uniform over the multiset of history and
//! knowledge tokens), an add-one smoothed bigram model estimated from a
//! corpus, and the uniform distribution. The copy component is what makes
//! `P(r | h, z)` depend on `z`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Encoder, Generator};
use crate::error::{Error, Result};
use crate::model::{DialogueHistory, Response};
use crate::text::normalize_text;
use crate::EOS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyEncoderConfig {
    pub dim: usize,
    pub hash_seed: u64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            dim: 64,
            hash_seed: 7,
        }
    }
}

impl ToyEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::param("dim", format!("must be >= 2, got {}", self.dim)));
        }
        Ok(())
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded FNV-1a with a final avalanche step.
fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ mix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(h)
}

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    config: ToyEncoderConfig,
}

impl ToyEncoder {
    pub fn new(config: ToyEncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(ToyEncoder { config })
    }

    pub fn config(&self) -> ToyEncoderConfig {
        self.config
    }

    /// Bucket index and sign for one token.
    pub fn bucket(&self, token: &str) -> (usize, f64) {
        let h = token_hash(token, self.config.hash_seed);
        let index = (h % self.config.dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        (index, sign)
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.config.dim];
        for tok in normalize_text(text) {
            let (i, s) = self.bucket(&tok);
            v[i] += s;
        }
        let norm = crate::linalg::l2_norm(&v);
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl Encoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, texts: &[&str]) -> core::result::Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyGeneratorConfig {
    pub lambda_copy: f64,
    pub lambda_bigram: f64,
    pub lambda_uniform: f64,
    pub max_len: usize,
}

impl Default for ToyGeneratorConfig {
    fn default() -> Self {
        ToyGeneratorConfig {
            lambda_copy: 0.8,
            lambda_bigram: 0.15,
            lambda_uniform: 0.05,
            max_len: 12,
        }
    }
}

impl ToyGeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = [self.lambda_copy, self.lambda_bigram, self.lambda_uniform];
        if ls.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::param("lambda", "mixture weights must be non-negative"));
        }
        let total: f64 = ls.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(
                "lambda",
                format!("mixture weights must sum to 1, got {total}"),
            ));
        }
        if self.max_len < 1 {
            return Err(Error::param("max_len", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct BigramRow {
    counts: BTreeMap<usize, u32>,
    total: u32,
}

/// Copy multiset for one (history, knowledge) pair, restricted to the
/// vocabulary.
#[derive(Debug, Clone)]
pub struct CopySource {
    counts: BTreeMap<usize, u32>,
    total: u32,
}

#[derive(Debug, Clone)]
pub struct ToyGenerator {
    config: ToyGeneratorConfig,
    vocab: Vec<String>,
    /// One row per vocabulary token plus a final start-of-sequence row.
    rows: Vec<BigramRow>,
    eos: usize,
}

impl ToyGenerator {
    /// Builds the vocabulary and bigram statistics from corpus lines. Each
    /// line is one sequence framed by start and `</s>`.
    pub fn from_corpus<I, S>(config: ToyGeneratorConfig, lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        config.validate()?;
        let sequences: Vec<Vec<String>> = lines
            .into_iter()
            .map(|l| normalize_text(l.as_ref()))
            .filter(|t| !t.is_empty())
            .collect();
        let mut set: BTreeSet<String> = sequences.iter().flatten().cloned().collect();
        set.insert(EOS.to_string());
        let vocab: Vec<String> = set.into_iter().collect();
        let eos = vocab.binary_search_by(|t| t.as_str().cmp(EOS)).unwrap_or(0);
        let start = vocab.len();
        let mut rows = vec![BigramRow::default(); vocab.len() + 1];
        let index = |t: &str| vocab.binary_search_by(|v| v.as_str().cmp(t)).ok();
        for seq in &sequences {
            let mut prev = start;
            for tok in seq.iter().map(String::as_str).chain(core::iter::once(EOS)) {
                let next = index(tok).expect("token collected into vocab");
                let row = &mut rows[prev];
                *row.counts.entry(next).or_insert(0) += 1;
                row.total += 1;
                prev = next;
            }
        }
        Ok(ToyGenerator {
            config,
            vocab,
            rows,
            eos,
        })
    }

    pub fn config(&self) -> ToyGeneratorConfig {
        self.config
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.vocab.binary_search_by(|v| v.as_str().cmp(token)).ok()
    }

    pub fn copy_source(&self, history: &DialogueHistory, knowledge: &str) -> CopySource {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        let tokens = normalize_text(knowledge)
            .into_iter()
            .chain(normalize_text(&history.flat_text()));
        for t in tokens {
            if let Some(i) = self.token_index(&t) {
                *counts.entry(i).or_insert(0) += 1;
                total += 1;
            }
        }
        CopySource { counts, total }
    }

    /// Bigram row for the token preceding the next one. Unknown tokens get
    /// an empty row, so the smoothed bigram falls back to uniform.
    fn prev_row(&self, prefix: &[String]) -> Option<&BigramRow> {
        match prefix.last() {
            None => self.rows.last(),
            Some(t) => self.token_index(t).map(|i| &self.rows[i]),
        }
    }

    fn prob(&self, copy: &CopySource, row: Option<&BigramRow>, next: usize) -> f64 {
        let v = self.vocab.len() as f64;
        let copy_p = if copy.total == 0 {
            1.0 / v
        } else {
            f64::from(copy.counts.get(&next).copied().unwrap_or(0)) / f64::from(copy.total)
        };
        let (count, total) = match row {
            Some(r) => (r.counts.get(&next).copied().unwrap_or(0), r.total),
            None => (0, 0),
        };
        let bigram_p = (f64::from(count) + 1.0) / (f64::from(total) + v);
        self.config.lambda_copy * copy_p
            + self.config.lambda_bigram * bigram_p
            + self.config.lambda_uniform / v
    }

    /// `log P(next | h, z, prefix)`.
    pub fn token_logprob(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        prefix: &[String],
        next: &str,
    ) -> Result<f64> {
        let idx = self
            .token_index(next)
            .ok_or_else(|| Error::NotInVocab(next.to_string()))?;
        let copy = self.copy_source(history, knowledge);
        Ok(libm::log(self.prob(&copy, self.prev_row(prefix), idx)))
    }

    /// Log-probabilities of every vocabulary token at one decoding step, in
    /// vocabulary order.
    pub fn step_logprobs(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        prefix: &[String],
    ) -> Vec<f64> {
        let copy = self.copy_source(history, knowledge);
        let row = self.prev_row(prefix);
        (0..self.vocab.len())
            .map(|i| libm::log(self.prob(&copy, row, i)))
            .collect()
    }

    /// Greedy decoding; ties go to the lexicographically smallest token.
    pub fn greedy_decode(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        max_len: usize,
    ) -> Response {
        let copy = self.copy_source(history, knowledge);
        let mut tokens: Vec<String> = Vec::new();
        let mut logprobs = Vec::new();
        while tokens.len() < max_len {
            let row = self.prev_row(&tokens);
            let mut best = 0;
            let mut best_p = f64::NEG_INFINITY;
            for i in 0..self.vocab.len() {
                let p = self.prob(&copy, row, i);
                if p > best_p {
                    best = i;
                    best_p = p;
                }
            }
            tokens.push(self.vocab[best].clone());
            logprobs.push(libm::log(best_p));
            if best == self.eos {
                break;
            }
        }
        Response {
            tokens,
            token_logprobs: Some(logprobs),
        }
    }
}

impl Generator for ToyGenerator {
    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn score(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        response: &[String],
    ) -> core::result::Result<Vec<f64>, BackendError> {
        let copy = self.copy_source(history, knowledge);
        let mut out = Vec::with_capacity(response.len());
        for (i, tok) in response.iter().enumerate() {
            let idx = self
                .token_index(tok)
                .ok_or_else(|| BackendError::NotInVocab(tok.clone()))?;
            out.push(libm::log(self.prob(&copy, self.prev_row(&response[..i]), idx)));
        }
        Ok(out)
    }

    fn greedy(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        max_len: usize,
    ) -> core::result::Result<Response, BackendError> {
        if max_len < 1 {
            return Err(BackendError::Other("max_len must be >= 1".into()));
        }
        Ok(self.greedy_decode(history, knowledge, max_len))
    }
}
