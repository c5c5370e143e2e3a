//! Single-query private generation.
//!
//! Each decoding step compares a context-free baseline token against votes
//! from `m` voters, each reading its own chunk of `k` retrieved documents.
//! While the voters agree with the baseline, the baseline is released for
//! free. When a noisy test says they disagree, the next token is drawn with
//! the exponential mechanism over the vote histogram. This is
//! AboveThreshold with at most `c = ⌊ε/ε₀⌋` discoveries, each costing ε₀.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QueryRecord};
use crate::epsilon::EpsilonAmount;
use crate::error::{Error, Result};
use crate::generator::{TokenGenerator, EOS};
use crate::mechanisms::{count_tokens, exponential_mechanism, sample_laplace, Token};
use crate::noise::NoiseSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpRagParams {
    /// Total budget ε of one call.
    pub eps_total: EpsilonAmount,
    /// Cost ε₀ of one discovery.
    pub eps_token: EpsilonAmount,
    pub max_tokens: usize,
    pub num_voters: usize,
    pub docs_per_voter: usize,
    /// Vote threshold θ, compared with the baseline token's vote count.
    pub vote_threshold: f64,
}

impl DpRagParams {
    pub fn validate(&self) -> Result<()> {
        if self.eps_token.is_zero() {
            return Err(Error::InvalidParameter("per-token epsilon must be positive".into()));
        }
        if self.eps_token > self.eps_total {
            return Err(Error::InvalidParameter(format!(
                "per-token epsilon {} exceeds total {}",
                self.eps_token, self.eps_total
            )));
        }
        if self.eps_token.exact_half().is_none() {
            return Err(Error::InvalidParameter(format!(
                "per-token epsilon {} must split exactly in half at micro-eps resolution",
                self.eps_token
            )));
        }
        if self.max_tokens == 0 || self.num_voters == 0 || self.docs_per_voter == 0 {
            return Err(Error::InvalidParameter(
                "max_tokens, num_voters and docs_per_voter must be positive".into(),
            ));
        }
        if !self.vote_threshold.is_finite() {
            return Err(Error::InvalidParameter("vote threshold must be finite".into()));
        }
        Ok(())
    }

    /// Discovery budget `⌊ε/ε₀⌋`.
    pub fn discovery_budget(&self) -> u64 {
        self.eps_total.whole_multiples_of(self.eps_token).unwrap_or(0)
    }

    /// ε_Lap = ε_Expo = ε₀/2.
    pub fn half_token_eps(&self) -> EpsilonAmount {
        self.eps_token.exact_half().expect("validated: eps_token is even in micro-eps")
    }

    /// Number of documents one call consumes, `m·k`.
    pub fn required_docs(&self) -> usize {
        self.num_voters * self.docs_per_voter
    }

    pub fn with_total(&self, eps_total: EpsilonAmount) -> Self {
        DpRagParams { eps_total, ..self.clone() }
    }
}

/// What happened at one decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub baseline: Token,
    pub votes: Vec<Token>,
    /// Number of voters agreeing with the baseline.
    pub support: u64,
    pub noisy_support: f64,
    pub noisy_threshold: f64,
    pub discovered: bool,
    pub emitted: Token,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpRagAnswer {
    /// Released tokens `y_1..y_t`, including a final EOS when one was emitted.
    pub tokens: Vec<Token>,
    pub discoveries: u64,
    /// Number of noisy-threshold draws (the initial one plus one per discovery).
    pub threshold_draws: u64,
    pub steps: Vec<StepTrace>,
}

/// Non-padding documents of a voter chunk; padding is an empty string and
/// contributes nothing to the context.
fn chunk_context<'a>(chunk: &[&'a Document]) -> Vec<&'a Document> {
    chunk.iter().copied().filter(|d| !d.is_padding()).collect()
}

/// Answers `query` from exactly `m·k` documents, given in retrieval-rank order.
///
/// Voter `i` reads documents `i·k .. (i+1)·k`. Noise is drawn in a fixed
/// order: the initial threshold, then per step the support noise, and on a
/// discovery the exponential-mechanism draw followed by the fresh threshold.
pub fn dp_rag_answer<G: TokenGenerator + ?Sized>(
    query: &QueryRecord,
    docs: &[&Document],
    gen: &G,
    params: &DpRagParams,
    noise: &mut NoiseSource,
) -> Result<DpRagAnswer> {
    params.validate()?;
    if docs.len() != params.required_docs() {
        return Err(Error::InvalidParameter(format!(
            "expected exactly {} documents ({} voters × {}), got {}",
            params.required_docs(),
            params.num_voters,
            params.docs_per_voter,
            docs.len()
        )));
    }
    let half = params.half_token_eps();
    let threshold_scale = 2.0 / half.as_f64();
    let support_scale = 4.0 / half.as_f64();
    let vocab = gen.vocab_size();
    let voters: Vec<Vec<&Document>> = docs.chunks(params.docs_per_voter).map(chunk_context).collect();

    let mut remaining = params.discovery_budget();
    let mut theta_hat = params.vote_threshold + sample_laplace(threshold_scale, noise)?;
    let mut threshold_draws = 1;
    let mut discoveries = 0;
    let mut tokens = Vec::new();
    let mut steps = Vec::new();

    for _ in 0..params.max_tokens {
        let baseline = gen.next_token(query, &[], &tokens)?;
        let votes = voters
            .iter()
            .map(|ctx| gen.next_token(query, ctx, &tokens))
            .collect::<Result<Vec<_>>>()?;
        let hist = count_tokens(&votes, vocab)?;
        let support = hist.count(baseline);
        let noisy_support = support as f64 + sample_laplace(support_scale, noise)?;
        let discovered = noisy_support <= theta_hat;
        let noisy_threshold = theta_hat;
        let emitted = if discovered {
            let y = exponential_mechanism(&hist, half, 1.0, noise)?;
            remaining -= 1;
            discoveries += 1;
            theta_hat = params.vote_threshold + sample_laplace(threshold_scale, noise)?;
            threshold_draws += 1;
            y
        } else {
            baseline
        };
        tokens.push(emitted);
        steps.push(StepTrace {
            baseline,
            votes,
            support,
            noisy_support,
            noisy_threshold,
            discovered,
            emitted,
        });
        if emitted == EOS || remaining == 0 {
            break;
        }
    }
    Ok(DpRagAnswer { tokens, discoveries, threshold_draws, steps })
}
