//! Domain types shared across the crate.
//!
//! Fields are public; constructors and `validate` enforce the invariants for
//! values that arrive from outside (datasets, remote backends).

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Wizard,
    Apprentice,
    System,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Wizard => "wizard",
            Speaker::Apprentice => "apprentice",
            Speaker::System => "system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self> {
        let turn = Turn {
            speaker,
            text: text.into(),
        };
        turn.validate()?;
        Ok(turn)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::invalid("turn", "text is empty after trimming"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueHistory {
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl DialogueHistory {
    pub fn new(turns: Vec<Turn>, topic: Option<String>) -> Result<Self> {
        let h = DialogueHistory { turns, topic };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid("history", "at least one turn is required"));
        }
        self.turns.iter().try_for_each(Turn::validate)
    }

    /// The text handed to an encoder: topic (if any) followed by every turn,
    /// one per line.
    pub fn flat_text(&self) -> String {
        let mut out = String::new();
        if let Some(topic) = &self.topic {
            out.push_str(topic);
            out.push('\n');
        }
        for (i, t) in self.turns.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&t.text);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeCandidate {
    pub id: String,
    pub text: String,
}

impl KnowledgeCandidate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        KnowledgeCandidate {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<KnowledgeCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_id: Option<String>,
}

impl CandidatePool {
    pub fn new(candidates: Vec<KnowledgeCandidate>, gold_id: Option<String>) -> Result<Self> {
        let pool = CandidatePool {
            candidates,
            gold_id,
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::invalid("candidate pool", "no candidates"));
        }
        let mut seen = BTreeSet::new();
        for c in &self.candidates {
            if c.text.trim().is_empty() {
                return Err(Error::invalid(
                    "candidate pool",
                    format!("candidate {:?} has empty text", c.id),
                ));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::invalid(
                    "candidate pool",
                    format!("duplicate candidate id {:?}", c.id),
                ));
            }
        }
        if let Some(gold) = &self.gold_id {
            if !seen.contains(gold.as_str()) {
                return Err(Error::invalid(
                    "candidate pool",
                    format!("gold id {gold:?} matches no candidate"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.id == id)
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeCandidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeSource {
    Dataset,
    Remote,
}

/// Knowledge text produced by a large model; noisy, possibly hallucinated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedKnowledge {
    pub text: String,
    pub source: KnowledgeSource,
}

impl GeneratedKnowledge {
    pub fn new(text: impl Into<String>, source: KnowledgeSource) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("generated knowledge", "text is empty"));
        }
        Ok(GeneratedKnowledge { text, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl Response {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        Response {
            tokens,
            token_logprobs: None,
        }
    }

    pub fn with_logprobs(tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self> {
        let r = Response {
            tokens,
            token_logprobs: Some(logprobs),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(lp) = &self.token_logprobs {
            if lp.len() != self.tokens.len() {
                return Err(Error::DimensionMismatch {
                    context: "response logprobs",
                    expected: self.tokens.len(),
                    got: lp.len(),
                });
            }
            if let Some(bad) = lp.iter().find(|&&x| x.is_nan() || x > 0.0) {
                return Err(Error::invalid(
                    "response",
                    format!("token logprob {bad} is not <= 0"),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Response text with the end-of-sequence token removed.
    pub fn text(&self) -> String {
        let visible: Vec<&str> = self
            .tokens
            .iter()
            .map(String::as_str)
            .filter(|t| *t != crate::EOS)
            .collect();
        crate::text::join_tokens(&visible)
    }

    /// Sum of token log-probabilities, if present.
    pub fn total_logprob(&self) -> Option<f64> {
        self.token_logprobs.as_ref().map(|lp| lp.iter().sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Retained candidate count.
    pub k: usize,
    /// Temperature of the similarity distribution.
    pub alpha: f64,
    /// Exponent applied to the posterior.
    pub beta: f64,
    pub gumbel_scale: f64,
    pub gumbel_location: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            k: 3,
            alpha: 5.0,
            beta: 0.4,
            gumbel_scale: 1.0,
            gumbel_location: 0.0,
            seed: 42,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::param("k", "must be >= 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::param("alpha", format!("must be > 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::param("beta", format!("must be in [0,1], got {}", self.beta)));
        }
        if !(self.gumbel_scale.is_finite() && self.gumbel_scale >= 0.0) {
            return Err(Error::param(
                "gumbel_scale",
                format!("must be >= 0, got {}", self.gumbel_scale),
            ));
        }
        if !self.gumbel_location.is_finite() {
            return Err(Error::param("gumbel_location", "must be finite".to_string()));
        }
        Ok(())
    }
}
