//! Synthetic corpora with controlled document reuse across queries.
//!
//! Every query (or, in correlated mode, every query group) gets a planted
//! fact and a pool of relevant documents carrying it. Relevant documents sit
//! close to the query in embedding space; their similarities are drawn from
//! a band whose position varies from query to query, so no single relevance
//! threshold suits every query. All other documents are random directions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Fact, QueryRecord};
use crate::error::{Error, Result};
use crate::generator::FIRST_ANSWER_TOKEN;
use crate::mechanisms::Token;
use crate::noise::NoiseSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadMode {
    /// Relevant-document sets of distinct queries are disjoint.
    Independent,
    /// Queries come in groups that share a fraction of their relevant documents.
    Correlated,
}

fn default_group_size() -> usize {
    2
}

fn default_vocab_size() -> usize {
    32
}

fn default_top_similarity() -> [f64; 2] {
    [0.80, 0.98]
}

fn default_band() -> f64 {
    0.15
}

fn default_filler_tokens() -> usize {
    4
}

/// Workload description, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub corpus_size: usize,
    pub dim: usize,
    pub num_queries: usize,
    pub mode: WorkloadMode,
    pub relevant_per_query: usize,
    /// Fraction of each query's relevant documents shared with its group.
    #[serde(default)]
    pub overlap: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    /// Range of the per-query similarity of the closest relevant document.
    #[serde(default = "default_top_similarity")]
    pub top_similarity: [f64; 2],
    /// Width of the similarity band below that top.
    #[serde(default = "default_band")]
    pub similarity_band: f64,
    #[serde(default = "default_filler_tokens")]
    pub filler_tokens: usize,
}

impl WorkloadSpec {
    pub fn new(corpus_size: usize, dim: usize, num_queries: usize, mode: WorkloadMode, relevant_per_query: usize) -> Self {
        WorkloadSpec {
            corpus_size,
            dim,
            num_queries,
            mode,
            relevant_per_query,
            overlap: if mode == WorkloadMode::Correlated { 1.0 } else { 0.0 },
            seed: 0,
            group_size: default_group_size(),
            vocab_size: default_vocab_size(),
            top_similarity: default_top_similarity(),
            similarity_band: default_band(),
            filler_tokens: default_filler_tokens(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn shared_per_group(&self) -> usize {
        match self.mode {
            WorkloadMode::Independent => 0,
            WorkloadMode::Correlated => (self.overlap * self.relevant_per_query as f64).round() as usize,
        }
    }

    /// Total number of documents that carry a fact.
    pub fn relevant_docs_needed(&self) -> usize {
        match self.mode {
            WorkloadMode::Independent => self.num_queries * self.relevant_per_query,
            WorkloadMode::Correlated => {
                let groups = self.num_queries.div_ceil(self.group_size.max(1));
                let shared = self.shared_per_group();
                groups * shared + self.num_queries * (self.relevant_per_query - shared)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dim < 2 {
            return bad("embedding dimension must be at least 2".into());
        }
        if self.relevant_per_query == 0 {
            return bad("relevant_per_query must be positive".into());
        }
        if self.group_size == 0 {
            return bad("group_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("overlap must lie in [0, 1], got {}", self.overlap));
        }
        if self.vocab_size <= FIRST_ANSWER_TOKEN as usize {
            return bad("vocab_size too small for answer tokens".into());
        }
        let [lo, hi] = self.top_similarity;
        if !(-1.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("top_similarity range {lo}..{hi} invalid"));
        }
        if !(self.similarity_band >= 0.0 && lo - self.similarity_band >= -1.0) {
            return bad("similarity band leaves [-1, 1]".into());
        }
        let needed = self.relevant_docs_needed();
        if needed > self.corpus_size {
            return Err(Error::InfeasibleWorkload(format!(
                "{needed} relevant documents needed but corpus holds {}",
                self.corpus_size
            )));
        }
        Ok(())
    }
}

/// A generated corpus, its queries, and the ground-truth relevant sets.
#[derive(Clone, Debug)]
pub struct Workload {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
    /// Relevant document ids per query, aligned with `queries`.
    pub relevant: Vec<BTreeSet<String>>,
}

impl Workload {
    /// Maps "number of queries a document is relevant to" → number of documents.
    pub fn reuse_histogram(&self) -> BTreeMap<usize, usize> {
        let mut uses: BTreeMap<&str, usize> = self.corpus.ids().map(|id| (id, 0)).collect();
        for set in &self.relevant {
            for id in set {
                *uses.get_mut(id.as_str()).expect("relevant ids come from the corpus") += 1;
            }
        }
        let mut hist = BTreeMap::new();
        for n in uses.values() {
            *hist.entry(*n).or_insert(0) += 1;
        }
        hist
    }
}

fn gaussian(noise: &mut NoiseSource) -> f64 {
    let u1 = noise.uniform();
    let u2 = noise.uniform();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn random_unit(dim: usize, noise: &mut NoiseSource) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| gaussian(noise)).collect();
    normalize(&mut v);
    v
}

/// A unit vector with inner product exactly `similarity` with unit `anchor`.
fn at_similarity(anchor: &[f64], similarity: f64, noise: &mut NoiseSource) -> Vec<f64> {
    let mut u = random_unit(anchor.len(), noise);
    let proj: f64 = u.iter().zip(anchor).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(anchor).for_each(|(x, a)| *x -= proj * a);
    normalize(&mut u);
    let ortho = (1.0 - similarity * similarity).max(0.0).sqrt();
    anchor.iter().zip(&u).map(|(a, x)| similarity * a + ortho * x).collect()
}

fn filler(n: usize, vocab: usize, noise: &mut NoiseSource) -> Vec<Token> {
    let span = vocab - FIRST_ANSWER_TOKEN as usize;
    (0..n)
        .map(|_| FIRST_ANSWER_TOKEN + ((noise.uniform() * span as f64) as usize).min(span - 1) as Token)
        .collect()
}

struct Builder<'a> {
    spec: &'a WorkloadSpec,
    noise: NoiseSource,
    docs: Vec<Document>,
}

impl Builder<'_> {
    fn next_id(&self) -> String {
        format!("d{:06}", self.docs.len())
    }

    fn answer_token(&mut self) -> Token {
        filler(1, self.spec.vocab_size, &mut self.noise)[0]
    }

    fn top_similarity(&mut self) -> f64 {
        let [lo, hi] = self.spec.top_similarity;
        lo + (hi - lo) * self.noise.uniform()
    }

    /// Adds `n` fact documents around `anchor`; returns their ids.
    fn relevant_docs(&mut self, anchor: &[f64], top: f64, n: usize, fact: &Fact) -> Vec<String> {
        (0..n)
            .map(|_| {
                let sim = top - self.spec.similarity_band * self.noise.uniform();
                let embedding = at_similarity(anchor, sim, &mut self.noise);
                let mut tokens = filler(self.spec.filler_tokens, self.spec.vocab_size, &mut self.noise);
                tokens.push(fact.answer);
                let id = self.next_id();
                self.docs.push(Document { id: id.clone(), tokens, embedding, fact: Some(fact.clone()) });
                id
            })
            .collect()
    }

    fn query(&mut self, id: String, embedding: Vec<f64>, answer: Token, group: Option<String>) -> QueryRecord {
        let tokens = filler(self.spec.filler_tokens, self.spec.vocab_size, &mut self.noise);
        QueryRecord { id, tokens, embedding, answers: vec![vec![answer]], group }
    }
}

/// Generates a corpus and query list. Deterministic in `spec` (including its seed).
pub fn generate_synthetic_workload(spec: &WorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let mut b = Builder {
        spec,
        noise: NoiseSource::new(spec.seed).substream("workload"),
        docs: Vec::with_capacity(spec.corpus_size),
    };
    let mut queries = Vec::with_capacity(spec.num_queries);
    let mut relevant = Vec::with_capacity(spec.num_queries);

    match spec.mode {
        WorkloadMode::Independent => {
            for t in 0..spec.num_queries {
                let id = format!("q{t:05}");
                let center = random_unit(spec.dim, &mut b.noise);
                let fact = Fact { key: id.clone(), answer: b.answer_token() };
                let top = b.top_similarity();
                let ids = b.relevant_docs(&center, top, spec.relevant_per_query, &fact);
                relevant.push(ids.into_iter().collect());
                queries.push(b.query(id, center, fact.answer, None));
            }
        }
        WorkloadMode::Correlated => {
            let shared = spec.shared_per_group();
            let exclusive = spec.relevant_per_query - shared;
            let mut t = 0;
            let mut g = 0;
            while t < spec.num_queries {
                let label = format!("g{g:05}");
                let center = random_unit(spec.dim, &mut b.noise);
                let fact = Fact { key: label.clone(), answer: b.answer_token() };
                let top = b.top_similarity();
                let shared_ids = b.relevant_docs(&center, top, shared, &fact);
                for _ in 0..spec.group_size.min(spec.num_queries - t) {
                    // Group members ask nearby variants of one question.
                    let embedding = at_similarity(&center, 0.99, &mut b.noise);
                    let own = b.relevant_docs(&embedding, top, exclusive, &fact);
                    relevant.push(shared_ids.iter().chain(&own).cloned().collect());
                    queries.push(b.query(format!("q{t:05}"), embedding, fact.answer, Some(label.clone())));
                    t += 1;
                }
                g += 1;
            }
        }
    }

    while b.docs.len() < spec.corpus_size {
        let embedding = random_unit(spec.dim, &mut b.noise);
        let tokens = filler(spec.filler_tokens, spec.vocab_size, &mut b.noise);
        let id = b.next_id();
        b.docs.push(Document { id, tokens, embedding, fact: None });
    }

    Ok(Workload { corpus: Corpus::new(b.docs)?, queries, relevant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dot;

    #[test]
    fn independent_reuse_histogram() {
        let spec = WorkloadSpec::new(200, 16, 10, WorkloadMode::Independent, 5);
        let w = generate_synthetic_workload(&spec).unwrap();
        let hist = w.reuse_histogram();
        assert_eq!(hist.get(&1), Some(&50));
        assert_eq!(hist.get(&0), Some(&150));
        assert_eq!(hist.len(), 2);
    }

    #[test]
    fn correlated_full_overlap_histogram() {
        let spec = WorkloadSpec::new(40, 16, 4, WorkloadMode::Correlated, 5);
        let w = generate_synthetic_workload(&spec).unwrap();
        let hist = w.reuse_histogram();
        assert_eq!(hist.get(&2), Some(&10));
        assert_eq!(hist.get(&0), Some(&30));
        assert_eq!(w.queries[0].group, w.queries[1].group);
        assert_ne!(w.queries[1].group, w.queries[2].group);
    }

    #[test]
    fn correlated_partial_overlap() {
        let mut spec = WorkloadSpec::new(100, 16, 4, WorkloadMode::Correlated, 10);
        spec.overlap = 0.4;
        let w = generate_synthetic_workload(&spec).unwrap();
        assert_eq!(w.relevant[0].intersection(&w.relevant[1]).count(), 4);
        assert_eq!(w.relevant[0].intersection(&w.relevant[2]).count(), 0);
        assert!(w.relevant.iter().all(|s| s.len() == 10));
    }

    #[test]
    fn single_query() {
        let spec = WorkloadSpec::new(10, 4, 1, WorkloadMode::Independent, 3);
        let w = generate_synthetic_workload(&spec).unwrap();
        assert_eq!(w.queries.len(), 1);
        assert_eq!(w.relevant[0].len(), 3);
    }

    #[test]
    fn infeasible_spec() {
        let spec = WorkloadSpec::new(20, 4, 5, WorkloadMode::Independent, 5);
        assert!(matches!(generate_synthetic_workload(&spec), Err(Error::InfeasibleWorkload(_))));
    }

    #[test]
    fn relevant_docs_carry_the_query_fact_and_sit_close() {
        let spec = WorkloadSpec::new(300, 32, 5, WorkloadMode::Independent, 10);
        let w = generate_synthetic_workload(&spec).unwrap();
        for (q, set) in w.queries.iter().zip(&w.relevant) {
            for id in set {
                let d = w.corpus.get(id).unwrap();
                let fact = d.fact.as_ref().unwrap();
                assert_eq!(fact.key, q.fact_key());
                assert_eq!(vec![fact.answer], q.answers[0]);
                let sim = dot(&d.embedding, &q.embedding);
                assert!(sim >= 0.80 - 0.15 - 1e-9 && sim <= 0.98 + 1e-9, "{sim}");
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = WorkloadSpec::new(100, 8, 4, WorkloadMode::Correlated, 6).with_seed(3);
        let a = generate_synthetic_workload(&spec).unwrap();
        let b = generate_synthetic_workload(&spec).unwrap();
        assert_eq!(a.corpus.docs(), b.corpus.docs());
        assert_eq!(a.queries, b.queries);
        let c = generate_synthetic_workload(&spec.clone().with_seed(4)).unwrap();
        assert_ne!(a.corpus.docs(), c.corpus.docs());
    }
}
