//! Multi-query private RAG.
//!
//! [`run_murag`] and [`run_murag_ada`] answer a query stream under a
//! per-document privacy filter, so the whole run is `M·ε_q`-DP no matter how
//! many queries arrive. [`run_naive_multi`] and [`run_subsample_multi`] are
//! the composition baselines; [`run_nonprivate_rag`] and [`run_non_rag`] are
//! the non-private references.
//!
//! Randomness is drawn from per-query substreams of the caller's
//! [`NoiseSource`]: `thr/{t}` for threshold release, `sample/{t}` for
//! subsampling and `rag/{t}` for generation. Runs are therefore reproducible
//! from the seed, and two methods that hand the same documents to the
//! generator for query `t` see the same generation noise.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    poisson_sample, precision_of, rank_order, relevance, top_k_scored, Corpus, Document, Fact, QueryRecord, ScoreBins,
    Scored,
};
use crate::dp_rag::{dp_rag_answer, DpRagParams};
use crate::epsilon::EpsilonAmount;
use crate::error::{Error, Result};
use crate::generator::{greedy_decode, TokenGenerator, EOS};
use crate::ledger::{BudgetLedger, Charge};
use crate::mechanisms::{sample_laplace, Token};
use crate::metrics::match_accuracy;
use crate::noise::NoiseSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Murag,
    MuragAda,
    Naive,
    Subsample,
    NonprivateRag,
    NonRag,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Murag => "murag",
            Method::MuragAda => "murag-ada",
            Method::Naive => "naive",
            Method::Subsample => "subsample",
            Method::NonprivateRag => "nonprivate-rag",
            Method::NonRag => "non-rag",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::Murag,
            Method::MuragAda,
            Method::Naive,
            Method::Subsample,
            Method::NonprivateRag,
            Method::NonRag,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// Settings for the fixed-threshold filter algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuragConfig {
    /// Relevance threshold τ; a document is retrieved when its score exceeds it.
    pub tau: f64,
    pub k: usize,
    pub max_retrievals: u32,
    pub eps_q: EpsilonAmount,
    pub dp_rag: DpRagParams,
    #[serde(default)]
    pub bins: ScoreBins,
    /// Offer earlier (query, answer) pairs as free context documents.
    #[serde(default)]
    pub reuse_history: bool,
}

impl MuragConfig {
    pub fn validate(&self) -> Result<()> {
        self.bins.count()?;
        if self.tau.is_nan() || self.tau > self.bins.hi || (self.tau.is_finite() && self.tau < self.bins.lo) {
            return Err(Error::InvalidParameter(format!(
                "tau {} outside score range [{}, {}]",
                self.tau, self.bins.lo, self.bins.hi
            )));
        }
        check_k(self.k, &self.dp_rag)?;
        self.dp_rag.with_total(self.eps_q).validate()
    }
}

/// Settings for the adaptive-threshold filter algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuragAdaConfig {
    #[serde(default)]
    pub bins: ScoreBins,
    pub k: usize,
    pub max_retrievals: u32,
    pub eps_thr: EpsilonAmount,
    pub eps_rag: EpsilonAmount,
    pub dp_rag: DpRagParams,
    #[serde(default)]
    pub reuse_history: bool,
}

impl MuragAdaConfig {
    /// Per-query budget `ε_q = ε_thr + ε_RAG`.
    pub fn eps_q(&self) -> EpsilonAmount {
        self.eps_thr + self.eps_rag
    }

    pub fn validate(&self) -> Result<()> {
        self.bins.count()?;
        if self.eps_thr.is_zero() || self.eps_rag.is_zero() {
            return Err(Error::InvalidParameter("eps_thr and eps_rag must both be positive".into()));
        }
        check_k(self.k, &self.dp_rag)?;
        self.dp_rag.with_total(self.eps_rag).validate()
    }
}

fn check_k(k: usize, dp: &DpRagParams) -> Result<()> {
    if k == 0 || k != dp.required_docs() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must equal voters × docs per voter = {}",
            dp.required_docs()
        )));
    }
    Ok(())
}

/// One charge inside a query record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeEntry {
    pub doc_id: String,
    pub micro_eps: u64,
}

/// Everything recorded about one answered query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_index: usize,
    pub query_id: String,
    pub answer: Vec<Token>,
    pub correct: bool,
    /// Threshold released by adaptive thresholding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub released_tau: Option<f64>,
    /// Score of the k-th best in-budget document when the query arrived.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_tau: Option<f64>,
    /// Documents retrieved (and, for filter methods, charged) for the query.
    pub retrieved: Vec<String>,
    /// Documents handed to the generator, in rank order, without padding.
    pub context: Vec<String>,
    pub charged: Vec<ChargeEntry>,
    pub discoveries: u64,
    /// Share of `retrieved` inside the true top-k of the whole corpus;
    /// absent when nothing was retrieved.
    pub precision: Option<f64>,
}

/// Result of one run of one method.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub queries: Vec<QueryOutcome>,
    /// ε of the whole run; `None` for non-private methods.
    pub eps_claim: Option<f64>,
    pub charge_log: Vec<Charge>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl RunReport {
    fn new(method: Method, eps_claim: Option<f64>) -> Self {
        RunReport { method, queries: Vec::new(), eps_claim, charge_log: Vec::new(), elapsed: Duration::ZERO }
    }

    /// Fraction of queries answered correctly; 0 for an empty run.
    pub fn match_accuracy(&self) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        self.queries.iter().filter(|q| q.correct).count() as f64 / self.queries.len() as f64
    }

    /// Mean retrieval precision in percent over queries that retrieved anything.
    pub fn retrieval_precision(&self) -> Option<f64> {
        let values: Vec<f64> = self.queries.iter().filter_map(|q| q.precision).collect();
        (!values.is_empty()).then(|| 100.0 * values.iter().sum::<f64>() / values.len() as f64)
    }

    /// Mean `|τ_t − exact τ|` over queries with a released threshold.
    pub fn mean_tau_abs_error(&self) -> Option<f64> {
        let errs: Vec<f64> = self
            .queries
            .iter()
            .filter_map(|q| Some((q.released_tau? - q.exact_tau?).abs()))
            .collect();
        (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
    }

    /// Total charged to each document across the run.
    pub fn charged_per_document(&self) -> BTreeMap<&str, u64> {
        let mut totals = BTreeMap::new();
        for c in &self.charge_log {
            *totals.entry(c.doc_id.as_str()).or_insert(0) += c.micro_eps;
        }
        totals
    }
}

/// Composition claim of the naive baseline: `T·ε_q`.
pub fn naive_claim(num_queries: usize, eps_q: EpsilonAmount) -> f64 {
    EpsilonAmount::from_micros(eps_q.micros() * num_queries as u64).as_f64()
}

/// Claim of the subsampled baseline: `T·log(1 + γ(e^{ε_q} − 1))`.
pub fn subsample_claim(num_queries: usize, eps_q: f64, gamma: f64) -> f64 {
    num_queries as f64 * (gamma * eps_q.exp_m1()).ln_1p()
}

/// Per-query ε that makes the subsampled baseline spend exactly `eps_total`
/// over `num_queries` queries: `ln(1 + (e^{ε/T} − 1)/γ)`.
pub fn amplified_eps_per_query(eps_total: f64, num_queries: usize, gamma: f64) -> Result<f64> {
    if !(eps_total > 0.0) || num_queries == 0 || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need eps_total > 0, T ≥ 1, 0 < γ < 1; got {eps_total}, {num_queries}, {gamma}"
        )));
    }
    Ok(((eps_total / num_queries as f64).exp_m1() / gamma).ln_1p())
}

/// Every document scored against one query, best first.
struct QueryScores<'a> {
    ranked: Vec<Scored<'a>>,
    padding: Scored<'a>,
}

impl<'a> QueryScores<'a> {
    fn new(corpus: &'a Corpus, query: &QueryRecord, bins: &ScoreBins) -> Result<Self> {
        let mut ranked = corpus
            .docs()
            .iter()
            .map(|d| Ok(Scored { doc: d, score: relevance(d, query, bins)? }))
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_unstable_by(rank_order);
        Ok(QueryScores { ranked, padding: Scored { doc: corpus.empty_document(), score: bins.lo } })
    }

    fn true_top(&self, k: usize) -> BTreeSet<String> {
        self.ranked.iter().take(k).map(|s| s.doc.id.clone()).collect()
    }

    fn top_k(&self, candidates: Vec<Scored<'a>>, k: usize) -> Vec<Scored<'a>> {
        top_k_scored(candidates, k, self.padding)
    }
}

/// Earlier answers offered back as context. They derive only from released
/// outputs, so using them costs nothing.
#[derive(Default)]
struct History {
    docs: Vec<Document>,
}

impl History {
    fn record(&mut self, t: usize, query: &QueryRecord, answer: &[Token]) {
        let Some(&first) = answer.iter().find(|&&tok| tok != EOS) else {
            return;
        };
        let mut tokens = query.tokens.clone();
        tokens.extend(answer.iter().copied().filter(|&tok| tok != EOS));
        self.docs.push(Document {
            id: format!("<history-{t}>"),
            tokens,
            embedding: query.embedding.clone(),
            fact: Some(Fact { key: query.fact_key().to_string(), answer: first }),
        });
    }

    fn above<'a>(&'a self, query: &QueryRecord, bins: &ScoreBins, passes: impl Fn(f64) -> bool) -> Result<Vec<Scored<'a>>> {
        let mut out = Vec::new();
        for d in &self.docs {
            let score = relevance(d, query, bins)?;
            if passes(score) {
                out.push(Scored { doc: d, score });
            }
        }
        Ok(out)
    }
}

fn precision(retrieved: &[String], reference: &BTreeSet<String>) -> Option<f64> {
    (!retrieved.is_empty()).then(|| precision_of(retrieved, reference))
}

fn ids_of(docs: &[Scored<'_>]) -> Vec<String> {
    docs.iter().map(|s| s.doc.id.clone()).collect()
}

fn context_ids(docs: &[Scored<'_>]) -> Vec<String> {
    docs.iter().filter(|s| !s.doc.is_padding()).map(|s| s.doc.id.clone()).collect()
}

fn charges_for(ledger: &BudgetLedger, from: usize) -> Vec<ChargeEntry> {
    ledger.charge_log()[from..]
        .iter()
        .map(|c| ChargeEntry { doc_id: c.doc_id.clone(), micro_eps: c.micro_eps })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn private_answer<G: TokenGenerator + ?Sized>(
    t: usize,
    query: &QueryRecord,
    ranked: &[Scored<'_>],
    gen: &G,
    params: &DpRagParams,
    noise: &NoiseSource,
) -> Result<(Vec<Token>, u64)> {
    let docs: Vec<&Document> = ranked.iter().map(|s| s.doc).collect();
    let mut rag_noise = noise.substream(&format!("rag/{t}"));
    let out = dp_rag_answer(query, &docs, gen, params, &mut rag_noise)?;
    Ok((out.tokens, out.discoveries))
}

/// Fixed-threshold multi-query RAG under a per-document filter.
///
/// For each query: documents with budget ≥ ε_q whose score exceeds τ are
/// retrieved and each charged ε_q; the top k of them answer the query
/// through [`dp_rag_answer`] with budget ε_q.
pub fn run_murag<G: TokenGenerator + ?Sized>(
    queries: &[QueryRecord],
    corpus: &Corpus,
    cfg: &MuragConfig,
    gen: &G,
    noise: &mut NoiseSource,
) -> Result<RunReport> {
    let started = Instant::now();
    cfg.validate()?;
    corpus.check_queries(queries)?;
    let mut ledger = BudgetLedger::new(corpus.ids(), cfg.max_retrievals, cfg.eps_q)?;
    let params = cfg.dp_rag.with_total(cfg.eps_q);
    let mut history = History::default();
    let mut report = RunReport::new(Method::Murag, Some(ledger.total_privacy_claim().as_f64()));

    for (t, query) in queries.iter().enumerate() {
        let scores = QueryScores::new(corpus, query, &cfg.bins)?;
        let retrieved: Vec<Scored<'_>> = scores
            .ranked
            .iter()
            .take_while(|s| s.score > cfg.tau)
            .filter(|s| ledger.is_active(&s.doc.id, cfg.eps_q))
            .copied()
            .collect();
        let log_start = ledger.charge_log().len();
        ledger.charge(retrieved.iter().map(|s| s.doc.id.as_str()), cfg.eps_q, t)?;

        let mut candidates = retrieved.clone();
        if cfg.reuse_history {
            candidates.extend(history.above(query, &cfg.bins, |s| s > cfg.tau)?);
        }
        let ranked = scores.top_k(candidates, cfg.k);
        let (answer, discoveries) = private_answer(t, query, &ranked, gen, &params, noise)?;

        let retrieved_ids = ids_of(&retrieved);
        report.queries.push(QueryOutcome {
            query_index: t,
            query_id: query.id.clone(),
            correct: match_accuracy(&answer, &query.answers) == 1,
            released_tau: None,
            exact_tau: None,
            precision: precision(&retrieved_ids, &scores.true_top(cfg.k)),
            retrieved: retrieved_ids,
            context: context_ids(&ranked),
            charged: charges_for(&ledger, log_start),
            discoveries,
            answer: answer.clone(),
        });
        if cfg.reuse_history {
            history.record(t, query, &answer);
        }
    }
    report.charge_log = ledger.charge_log().to_vec();
    report.elapsed = started.elapsed();
    Ok(report)
}

/// Score of the `k`-th best document that can afford `required`, or `lo`
/// when fewer than `k` can.
fn kth_active_score(ranked: &[Scored<'_>], ledger: &BudgetLedger, required: EpsilonAmount, k: usize, lo: f64) -> f64 {
    if k == 0 {
        return lo;
    }
    ranked
        .iter()
        .filter(|s| ledger.is_active(&s.doc.id, required))
        .nth(k - 1)
        .map_or(lo, |s| s.score)
}

/// Adaptive-threshold multi-query RAG under a per-document filter.
///
/// Step 1 walks the score bins from the top. Each bin's in-budget documents
/// are charged ε_thr and their count, plus Lap(1/ε_thr), is added to a
/// running noisy sum; the walk stops at the first bin where the sum reaches
/// k and releases that bin's lower edge as τ_t. If the sum never reaches k,
/// τ_t is the lowest edge and everything accumulated is kept. Step 2 runs
/// [`dp_rag_answer`] with ε_RAG on the top k of the accumulated documents
/// that can still afford ε_RAG, and charges ε_RAG to all of them.
pub fn run_murag_ada<G: TokenGenerator + ?Sized>(
    queries: &[QueryRecord],
    corpus: &Corpus,
    cfg: &MuragAdaConfig,
    gen: &G,
    noise: &mut NoiseSource,
) -> Result<RunReport> {
    let started = Instant::now();
    cfg.validate()?;
    corpus.check_queries(queries)?;
    let eps_q = cfg.eps_q();
    let mut ledger = BudgetLedger::new(corpus.ids(), cfg.max_retrievals, eps_q)?;
    let params = cfg.dp_rag.with_total(cfg.eps_rag);
    let bin_count = cfg.bins.count()?;
    let laplace_scale = 1.0 / cfg.eps_thr.as_f64();
    let mut history = History::default();
    let mut report = RunReport::new(Method::MuragAda, Some(ledger.total_privacy_claim().as_f64()));

    for (t, query) in queries.iter().enumerate() {
        let scores = QueryScores::new(corpus, query, &cfg.bins)?;
        let mut thr_noise = noise.substream(&format!("thr/{t}"));
        let log_start = ledger.charge_log().len();

        let exact_tau = kth_active_score(&scores.ranked, &ledger, cfg.eps_thr, cfg.k, cfg.bins.lo);

        // Bins are walked top-down, so the ranked list is consumed in order.
        let mut next = 0;
        let mut noisy_sum = 0.0;
        let mut accumulated: Vec<Scored<'_>> = Vec::new();
        let mut released = cfg.bins.lo;
        for i in (0..bin_count).rev() {
            let start = next;
            while next < scores.ranked.len() && cfg.bins.ascending_index(scores.ranked[next].score) >= i {
                next += 1;
            }
            let in_bin: Vec<Scored<'_>> = scores.ranked[start..next]
                .iter()
                .filter(|s| ledger.is_active(&s.doc.id, cfg.eps_thr))
                .copied()
                .collect();
            noisy_sum += in_bin.len() as f64 + sample_laplace(laplace_scale, &mut thr_noise)?;
            ledger.charge(in_bin.iter().map(|s| s.doc.id.as_str()), cfg.eps_thr, t)?;
            accumulated.extend(in_bin);
            if noisy_sum >= cfg.k as f64 {
                released = cfg.bins.edge(i);
                break;
            }
        }

        let usable: Vec<Scored<'_>> = accumulated
            .into_iter()
            .filter(|s| ledger.is_active(&s.doc.id, cfg.eps_rag))
            .collect();
        let mut candidates = usable.clone();
        if cfg.reuse_history {
            candidates.extend(history.above(query, &cfg.bins, |s| s >= released)?);
        }
        let ranked = scores.top_k(candidates, cfg.k);
        let (answer, discoveries) = private_answer(t, query, &ranked, gen, &params, noise)?;
        ledger.charge(usable.iter().map(|s| s.doc.id.as_str()), cfg.eps_rag, t)?;

        let mut retrieved_ids = ids_of(&usable);
        retrieved_ids.sort();
        report.queries.push(QueryOutcome {
            query_index: t,
            query_id: query.id.clone(),
            correct: match_accuracy(&answer, &query.answers) == 1,
            released_tau: Some(released),
            exact_tau: Some(exact_tau),
            precision: precision(&retrieved_ids, &scores.true_top(cfg.k)),
            retrieved: retrieved_ids,
            context: context_ids(&ranked),
            charged: charges_for(&ledger, log_start),
            discoveries,
            answer: answer.clone(),
        });
        if cfg.reuse_history {
            history.record(t, query, &answer);
        }
    }
    report.charge_log = ledger.charge_log().to_vec();
    report.elapsed = started.elapsed();
    Ok(report)
}

fn composition_run<G: TokenGenerator + ?Sized>(
    method: Method,
    queries: &[QueryRecord],
    corpus: &Corpus,
    eps_q: EpsilonAmount,
    dp_rag: &DpRagParams,
    bins: &ScoreBins,
    gamma: Option<f64>,
    gen: &G,
    noise: &mut NoiseSource,
) -> Result<RunReport> {
    let started = Instant::now();
    corpus.check_queries(queries)?;
    let params = dp_rag.with_total(eps_q);
    params.validate()?;
    let k = params.required_docs();
    let claim = match gamma {
        None => naive_claim(queries.len(), eps_q),
        Some(g) => subsample_claim(queries.len(), eps_q.as_f64(), g),
    };
    let mut report = RunReport::new(method, Some(claim));
    let all: Vec<&Document> = corpus.docs().iter().collect();

    for (t, query) in queries.iter().enumerate() {
        let scores = QueryScores::new(corpus, query, bins)?;
        let pool: Vec<Scored<'_>> = match gamma {
            None => scores.ranked.clone(),
            Some(g) => {
                let mut sample_noise = noise.substream(&format!("sample/{t}"));
                let kept: BTreeSet<&str> = poisson_sample(&all, g, &mut sample_noise)?
                    .into_iter()
                    .map(|d| d.id.as_str())
                    .collect();
                scores.ranked.iter().copied().filter(|s| kept.contains(s.doc.id.as_str())).collect()
            }
        };
        let ranked = scores.top_k(pool, k);
        let (answer, discoveries) = private_answer(t, query, &ranked, gen, &params, noise)?;
        let retrieved = context_ids(&ranked);
        report.queries.push(QueryOutcome {
            query_index: t,
            query_id: query.id.clone(),
            correct: match_accuracy(&answer, &query.answers) == 1,
            released_tau: None,
            exact_tau: None,
            precision: precision(&retrieved, &scores.true_top(k)),
            context: retrieved.clone(),
            retrieved,
            charged: Vec::new(),
            discoveries,
            answer,
        });
    }
    report.elapsed = started.elapsed();
    Ok(report)
}

/// Independent private answers over the whole corpus; `T·ε_q`-DP by basic composition.
pub fn run_naive_multi<G: TokenGenerator + ?Sized>(
    queries: &[QueryRecord],
    corpus: &Corpus,
    eps_q: EpsilonAmount,
    dp_rag: &DpRagParams,
    bins: &ScoreBins,
    gen: &G,
    noise: &mut NoiseSource,
) -> Result<RunReport> {
    composition_run(Method::Naive, queries, corpus, eps_q, dp_rag, bins, None, gen, noise)
}

/// Private answers over a fresh Poisson subsample per query;
/// `T·log(1 + γ(e^{ε_q} − 1))`-DP by amplification and composition.
#[allow(clippy::too_many_arguments)]
pub fn run_subsample_multi<G: TokenGenerator + ?Sized>(
    queries: &[QueryRecord],
    corpus: &Corpus,
    gamma: f64,
    eps_q: EpsilonAmount,
    dp_rag: &DpRagParams,
    bins: &ScoreBins,
    gen: &G,
    noise: &mut NoiseSource,
) -> Result<RunReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("sampling rate must lie in (0, 1), got {gamma}")));
    }
    composition_run(Method::Subsample, queries, corpus, eps_q, dp_rag, bins, Some(gamma), gen, noise)
}

/// Greedy generation with the true top-k documents as one context.
pub fn run_nonprivate_rag<G: TokenGenerator + ?Sized>(
    queries: &[QueryRecord],
    corpus: &Corpus,
    k: usize,
    max_tokens: usize,
    bins: &ScoreBins,
    gen: &G,
) -> Result<RunReport> {
    let started = Instant::now();
    corpus.check_queries(queries)?;
    let mut report = RunReport::new(Method::NonprivateRag, None);
    for (t, query) in queries.iter().enumerate() {
        let scores = QueryScores::new(corpus, query, bins)?;
        let ranked = scores.top_k(scores.ranked.iter().take(k).copied().collect(), k.min(corpus.len()));
        let context: Vec<&Document> = ranked.iter().map(|s| s.doc).collect();
        let answer = greedy_decode(gen, query, &context, max_tokens)?;
        let retrieved = context_ids(&ranked);
        report.queries.push(QueryOutcome {
            query_index: t,
            query_id: query.id.clone(),
            correct: match_accuracy(&answer, &query.answers) == 1,
            released_tau: None,
            exact_tau: None,
            precision: precision(&retrieved, &scores.true_top(k)),
            context: retrieved.clone(),
            retrieved,
            charged: Vec::new(),
            discoveries: 0,
            answer,
        });
    }
    report.elapsed = started.elapsed();
    Ok(report)
}

/// Greedy generation without retrieval.
pub fn run_non_rag<G: TokenGenerator + ?Sized>(
    queries: &[QueryRecord],
    max_tokens: usize,
    gen: &G,
) -> Result<RunReport> {
    let started = Instant::now();
    let mut report = RunReport::new(Method::NonRag, None);
    for (t, query) in queries.iter().enumerate() {
        let answer = greedy_decode(gen, query, &[], max_tokens)?;
        report.queries.push(QueryOutcome {
            query_index: t,
            query_id: query.id.clone(),
            correct: match_accuracy(&answer, &query.answers) == 1,
            released_tau: None,
            exact_tau: None,
            retrieved: Vec::new(),
            context: Vec::new(),
            charged: Vec::new(),
            discoveries: 0,
            precision: None,
            answer,
        });
    }
    report.elapsed = started.elapsed();
    Ok(report)
}

/// Any of the six methods with its settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodConfig {
    Murag(MuragConfig),
    MuragAda(MuragAdaConfig),
    #[serde(rename_all = "snake_case")]
    Naive {
        eps_q: EpsilonAmount,
        dp_rag: DpRagParams,
        #[serde(default)]
        bins: ScoreBins,
    },
    #[serde(rename_all = "snake_case")]
    Subsample {
        gamma: f64,
        eps_q: EpsilonAmount,
        dp_rag: DpRagParams,
        #[serde(default)]
        bins: ScoreBins,
    },
    #[serde(rename_all = "snake_case")]
    NonprivateRag {
        k: usize,
        max_tokens: usize,
        #[serde(default)]
        bins: ScoreBins,
    },
    #[serde(rename_all = "snake_case")]
    NonRag { max_tokens: usize },
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Murag(_) => Method::Murag,
            MethodConfig::MuragAda(_) => Method::MuragAda,
            MethodConfig::Naive { .. } => Method::Naive,
            MethodConfig::Subsample { .. } => Method::Subsample,
            MethodConfig::NonprivateRag { .. } => Method::NonprivateRag,
            MethodConfig::NonRag { .. } => Method::NonRag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Murag(c) => c.validate(),
            MethodConfig::MuragAda(c) => c.validate(),
            MethodConfig::Naive { eps_q, dp_rag, bins } => {
                bins.count()?;
                dp_rag.with_total(*eps_q).validate()
            }
            MethodConfig::Subsample { gamma, eps_q, dp_rag, bins } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(Error::InvalidParameter(format!("sampling rate must lie in (0, 1), got {gamma}")));
                }
                bins.count()?;
                dp_rag.with_total(*eps_q).validate()
            }
            MethodConfig::NonprivateRag { bins, max_tokens, .. } => {
                bins.count()?;
                positive_tokens(*max_tokens)
            }
            MethodConfig::NonRag { max_tokens } => positive_tokens(*max_tokens),
        }
    }

    /// The ε a run over `num_queries` queries must report, computed from the
    /// settings alone.
    pub fn expected_claim(&self, num_queries: usize) -> Option<f64> {
        match self {
            MethodConfig::Murag(c) => Some(c.eps_q.as_f64() * f64::from(c.max_retrievals)),
            MethodConfig::MuragAda(c) => Some(c.eps_q().as_f64() * f64::from(c.max_retrievals)),
            MethodConfig::Naive { eps_q, .. } => Some(eps_q.as_f64() * num_queries as f64),
            MethodConfig::Subsample { gamma, eps_q, .. } => {
                Some(num_queries as f64 * (gamma * eps_q.as_f64().exp_m1()).ln_1p())
            }
            MethodConfig::NonprivateRag { .. } | MethodConfig::NonRag { .. } => None,
        }
    }

    pub fn run<G: TokenGenerator + ?Sized>(
        &self,
        queries: &[QueryRecord],
        corpus: &Corpus,
        gen: &G,
        noise: &mut NoiseSource,
    ) -> Result<RunReport> {
        match self {
            MethodConfig::Murag(c) => run_murag(queries, corpus, c, gen, noise),
            MethodConfig::MuragAda(c) => run_murag_ada(queries, corpus, c, gen, noise),
            MethodConfig::Naive { eps_q, dp_rag, bins } => {
                run_naive_multi(queries, corpus, *eps_q, dp_rag, bins, gen, noise)
            }
            MethodConfig::Subsample { gamma, eps_q, dp_rag, bins } => {
                run_subsample_multi(queries, corpus, *gamma, *eps_q, dp_rag, bins, gen, noise)
            }
            MethodConfig::NonprivateRag { k, max_tokens, bins } => {
                run_nonprivate_rag(queries, corpus, *k, *max_tokens, bins, gen)
            }
            MethodConfig::NonRag { max_tokens } => run_non_rag(queries, *max_tokens, gen),
        }
    }
}

fn positive_tokens(max_tokens: usize) -> Result<()> {
    if max_tokens == 0 {
        return Err(Error::InvalidParameter("max_tokens must be positive".into()));
    }
    Ok(())
}
