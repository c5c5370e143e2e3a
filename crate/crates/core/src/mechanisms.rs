//! Laplace noise, the exponential mechanism, and token counting.

use serde::{Deserialize, Serialize};

use crate::epsilon::EpsilonAmount;
use crate::error::{Error, Result};
use crate::noise::NoiseSource;

/// Index into the generator vocabulary.
pub type Token = u32;

/// Inverse CDF of Laplace(0, scale) evaluated at `u` in (0, 1).
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    let centered = u - 0.5;
    -centered.signum() * scale * (1.0 - 2.0 * centered.abs()).ln()
}

pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// One Laplace(0, `scale`) draw from exactly one uniform.
///
/// In noiseless mode this returns 0 without consuming a draw.
pub fn sample_laplace(scale: f64, noise: &mut NoiseSource) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "laplace scale must be positive and finite, got {scale}"
        )));
    }
    if noise.is_noiseless() {
        return Ok(0.0);
    }
    Ok(laplace_inverse_cdf(noise.uniform(), scale))
}

/// Per-token vote counts over a fixed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: Vec<u64>,
}

impl Histogram {
    pub fn zeros(vocab_size: usize) -> Result<Self> {
        Self::from_counts(vec![0; vocab_size])
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyHistogram);
        }
        Ok(Histogram { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn vocab_size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, token: Token) -> u64 {
        self.counts.get(token as usize).copied().unwrap_or(0)
    }

    /// Highest count, ties resolved to the lowest index.
    pub fn argmax(&self) -> Token {
        let mut best = 0;
        for (j, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = j;
            }
        }
        best as Token
    }
}

/// Counts how often each vocabulary entry occurs in `tokens`.
pub fn count_tokens(tokens: &[Token], vocab_size: usize) -> Result<Histogram> {
    let mut counts = vec![0u64; vocab_size];
    for &t in tokens {
        let slot = counts.get_mut(t as usize).ok_or(Error::TokenOutOfRange {
            token: t as usize,
            vocab_size,
        })?;
        *slot += 1;
    }
    Histogram::from_counts(counts)
}

fn check_em_params(epsilon: EpsilonAmount, sensitivity: f64) -> Result<()> {
    if epsilon.is_zero() {
        return Err(Error::InvalidParameter(
            "exponential mechanism needs epsilon > 0; use noiseless mode for argmax".into(),
        ));
    }
    if !(sensitivity > 0.0) || !sensitivity.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sensitivity must be positive, got {sensitivity}"
        )));
    }
    Ok(())
}

/// Closed-form output distribution of the exponential mechanism with weights
/// `exp(ε·u_j / (2Δu))`.
///
/// The largest exponent is subtracted before exponentiating, so large
/// utilities cannot overflow.
pub fn exponential_probabilities(
    hist: &Histogram,
    epsilon: EpsilonAmount,
    sensitivity: f64,
) -> Result<Vec<f64>> {
    check_em_params(epsilon, sensitivity)?;
    let factor = epsilon.as_f64() / (2.0 * sensitivity);
    let max = *hist.counts.iter().max().expect("histogram is non-empty") as f64;
    let weights: Vec<f64> = hist
        .counts
        .iter()
        .map(|&c| (factor * (c as f64 - max)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// Samples a token index with probability proportional to `exp(ε·u_j / (2Δu))`.
///
/// Consumes one uniform. In noiseless mode returns [`Histogram::argmax`].
pub fn exponential_mechanism(
    hist: &Histogram,
    epsilon: EpsilonAmount,
    sensitivity: f64,
    noise: &mut NoiseSource,
) -> Result<Token> {
    check_em_params(epsilon, sensitivity)?;
    if noise.is_noiseless() {
        return Ok(hist.argmax());
    }
    let probs = exponential_probabilities(hist, epsilon, sensitivity)?;
    let u = noise.uniform();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(j as Token);
        }
    }
    // u landed in the rounding slack above the final partial sum.
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as Token)
}
