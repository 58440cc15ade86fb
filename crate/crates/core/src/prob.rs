//! Log-space categorical distributions.
//!
//! Every distribution in the pipeline (prior, similarity, refined,
//! posterior) is a [`LogDistribution`] over candidate ids. Probabilities only
//! materialize at API boundaries.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest probability that is ever logged from a computed value.
pub const PROB_FLOOR: f64 = 1e-300;

/// Tolerance for the normalization invariant.
pub const NORM_TOL: f64 = 1e-9;

/// `ln(max(p, PROB_FLOOR))`, for probabilities that may have underflowed.
pub fn floored_ln(p: f64) -> f64 {
    libm::log(p.max(PROB_FLOOR))
}

/// log Σ exp(x), stable under large magnitudes. Returns −∞ for an empty
/// slice or when every entry is −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| libm::exp(x - max)).sum();
    max + libm::log(sum)
}

/// `logits_i − log Σ_j exp(logits_j)`.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("log_softmax"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log_softmax"));
    }
    let lse = log_sum_exp(logits);
    Ok(logits.iter().map(|&x| x - lse).collect())
}

/// Renormalizes log-weights that may contain −∞ entries (structural zeros).
fn renormalize(logweights: &[f64]) -> Result<Vec<f64>> {
    if logweights.is_empty() {
        return Err(Error::Empty("distribution"));
    }
    if logweights.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::NonFinite("distribution"));
    }
    let lse = log_sum_exp(logweights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::invalid("distribution", "all weights are zero"));
    }
    Ok(logweights.iter().map(|&x| x - lse).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDistribution {
    pub ids: Vec<String>,
    pub logweights: Vec<f64>,
    pub normalized: bool,
}

impl LogDistribution {
    /// Unnormalized weights; checks only that lengths agree.
    pub fn unnormalized(ids: Vec<String>, logweights: Vec<f64>) -> Result<Self> {
        if ids.len() != logweights.len() {
            return Err(Error::DimensionMismatch {
                context: "distribution",
                expected: ids.len(),
                got: logweights.len(),
            });
        }
        Ok(LogDistribution {
            ids,
            logweights,
            normalized: false,
        })
    }

    /// Softmax of finite logits.
    pub fn from_logits(ids: Vec<String>, logits: &[f64]) -> Result<Self> {
        if ids.len() != logits.len() {
            return Err(Error::DimensionMismatch {
                context: "distribution",
                expected: ids.len(),
                got: logits.len(),
            });
        }
        Ok(LogDistribution {
            ids,
            logweights: log_softmax(logits)?,
            normalized: true,
        })
    }

    pub fn uniform(ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("distribution"));
        }
        let w = -libm::log(ids.len() as f64);
        let logweights = alloc::vec![w; ids.len()];
        Ok(LogDistribution {
            ids,
            logweights,
            normalized: true,
        })
    }

    pub fn normalize(&self) -> Result<Self> {
        Ok(LogDistribution {
            ids: self.ids.clone(),
            logweights: renormalize(&self.logweights)?,
            normalized: true,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn log_mass(&self) -> f64 {
        log_sum_exp(&self.logweights)
    }

    pub fn probs(&self) -> Vec<f64> {
        self.logweights.iter().map(|&w| libm::exp(w)).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn logweight(&self, id: &str) -> Option<f64> {
        self.position(id).map(|i| self.logweights[i])
    }

    pub fn prob(&self, id: &str) -> Option<f64> {
        self.logweight(id).map(libm::exp)
    }

    /// Checks that both distributions range over the same id set and returns,
    /// for each of `self`'s ids, its position in `other`.
    pub fn alignment(&self, other: &LogDistribution) -> Result<Vec<usize>> {
        if self.len() != other.len() {
            return Err(Error::IdSetMismatch(format!(
                "{} ids vs {} ids",
                self.len(),
                other.len()
            )));
        }
        self.ids
            .iter()
            .map(|id| {
                other
                    .position(id)
                    .ok_or_else(|| Error::IdSetMismatch(format!("{id:?} missing")))
            })
            .collect()
    }

    /// Ids sorted by descending weight; equal weights are ordered by `key`
    /// ascending (typically the pool index).
    pub fn ranking_by<F: Fn(&str) -> usize>(&self, key: F) -> Vec<String> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.logweights[b]
                .total_cmp(&self.logweights[a])
                .then_with(|| key(&self.ids[a]).cmp(&key(&self.ids[b])))
        });
        order.into_iter().map(|i| self.ids[i].clone()).collect()
    }

    /// Argmax with ties broken by `key` ascending.
    pub fn argmax_by<F: Fn(&str) -> usize>(&self, key: F) -> Option<String> {
        self.ranking_by(key).into_iter().next()
    }
}

/// Raises a normalized distribution to `exponent` and renormalizes.
///
/// Exponent 1 returns the input unchanged. With exponent 0, −∞ entries are
/// treated as 0·(−∞) = 0, giving the uniform distribution.
pub fn sharpen(dist: &LogDistribution, exponent: f64) -> Result<LogDistribution> {
    if !dist.normalized {
        return Err(Error::invalid("sharpen", "input is not normalized"));
    }
    if !exponent.is_finite() {
        return Err(Error::NonFinite("sharpen exponent"));
    }
    if exponent == 1.0 {
        return Ok(dist.clone());
    }
    let has_zero = dist.logweights.iter().any(|w| *w == f64::NEG_INFINITY);
    if exponent < 0.0 && has_zero {
        return Err(Error::param(
            "exponent",
            "negative exponent on a distribution with zero-probability entries",
        ));
    }
    let scaled: Vec<f64> = dist
        .logweights
        .iter()
        .map(|&w| {
            if exponent == 0.0 {
                0.0
            } else {
                w * exponent
            }
        })
        .collect();
    Ok(LogDistribution {
        ids: dist.ids.clone(),
        logweights: renormalize(&scaled)?,
        normalized: true,
    })
}
