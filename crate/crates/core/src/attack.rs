//! Multi-query membership inference (interrogation attack) at desk scale.
//!
//! The attacker holds candidate documents and asks the system `m` questions
//! that only a given candidate answers. A candidate's membership score is the
//! fraction of those questions answered correctly; ROC/AUC over member and
//! non-member scores measures how much the system leaks.

use serde::{Deserialize, Serialize};

use crate::corpus::{dot, Corpus, Document, Fact, QueryRecord};
use crate::error::{Error, Result};
use crate::generator::{TokenGenerator, FIRST_ANSWER_TOKEN};
use crate::mechanisms::Token;
use crate::metrics::match_accuracy;
use crate::noise::NoiseSource;
use crate::orchestrators::MethodConfig;
use crate::workload::{generate_synthetic_workload, WorkloadSpec};

/// Inner product between a probe and its target document.
pub const PROBE_SIMILARITY: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub query: QueryRecord,
    pub expected: Vec<Token>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub target_doc_id: String,
    pub probes: Vec<Probe>,
}

impl ProbeSet {
    pub fn queries(&self) -> Vec<QueryRecord> {
        self.probes.iter().map(|p| p.query.clone()).collect()
    }
}

fn gaussian(noise: &mut NoiseSource) -> f64 {
    let u1 = noise.uniform();
    let u2 = noise.uniform();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = dot(&v, &v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// A unit vector at inner product `similarity` with unit `anchor`.
fn near(anchor: &[f64], similarity: f64, noise: &mut NoiseSource) -> Vec<f64> {
    let raw: Vec<f64> = (0..anchor.len()).map(|_| gaussian(noise)).collect();
    let proj = dot(&raw, anchor);
    let ortho = unit(raw.iter().zip(anchor).map(|(x, a)| x - proj * a).collect());
    let side = (1.0 - similarity * similarity).max(0.0).sqrt();
    anchor.iter().zip(&ortho).map(|(a, o)| similarity * a + side * o).collect()
}

/// `m` questions about `doc`'s planted fact.
///
/// Each probe sits next to the document in embedding space, which is how the
/// attacker forces it into the retrieved set.
pub fn build_probe_set(doc: &Document, m: usize, noise: &mut NoiseSource) -> Result<ProbeSet> {
    let fact = doc
        .fact
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("document {} has no planted fact", doc.id)))?;
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one probe".into()));
    }
    if doc.embedding.len() < 2 {
        return Err(Error::InvalidParameter("probe construction needs embeddings of dimension ≥ 2".into()));
    }
    let anchor = unit(doc.embedding.clone());
    let probes = (0..m)
        .map(|j| {
            let query = QueryRecord {
                id: format!("{}/p{j:03}", doc.id),
                tokens: doc.tokens.iter().copied().filter(|&t| t != fact.answer).collect(),
                embedding: near(&anchor, PROBE_SIMILARITY, noise),
                answers: vec![vec![fact.answer]],
                group: Some(fact.key.clone()),
            };
            Probe { query, expected: vec![fact.answer] }
        })
        .collect();
    Ok(ProbeSet { target_doc_id: doc.id.clone(), probes })
}

/// Fraction of probes whose answer contains the expected answer.
///
/// The probes run through `system` as an ordinary query stream, so they pay
/// for retrieval like any other query.
pub fn membership_score<G: TokenGenerator + ?Sized>(
    probes: &ProbeSet,
    system: &MethodConfig,
    corpus: &Corpus,
    gen: &G,
    noise: &mut NoiseSource,
) -> Result<f64> {
    let report = system.run(&probes.queries(), corpus, gen, noise)?;
    Ok(score_answers(probes, report.queries.iter().map(|q| q.answer.as_slice())))
}

fn score_answers<'a>(probes: &ProbeSet, answers: impl Iterator<Item = &'a [Token]>) -> f64 {
    let hits: usize = probes
        .probes
        .iter()
        .zip(answers)
        .map(|(p, a)| usize::from(match_accuracy(a, std::slice::from_ref(&p.expected))))
        .sum();
    hits as f64 / probes.probes.len() as f64
}

/// ROC curve from the `score ≥ threshold` rule over every distinct score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(FPR, TPR)` pairs from `(0, 0)` to `(1, 1)`, thresholds descending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

pub fn roc_auc(in_scores: &[f64], out_scores: &[f64]) -> Result<RocCurve> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::InvalidParameter("ROC needs at least one member and one non-member score".into()));
    }
    if in_scores.iter().chain(out_scores).any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("scores must not be NaN".into()));
    }
    let mut thresholds: Vec<f64> = in_scores.iter().chain(out_scores).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let (n_in, n_out) = (in_scores.len() as f64, out_scores.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    for th in thresholds {
        let tp = in_scores.iter().filter(|&&s| s >= th).count() as f64;
        let fp = out_scores.iter().filter(|&&s| s >= th).count() as f64;
        points.push((fp / n_out, tp / n_in));
    }
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    Ok(RocCurve { points, auc })
}

/// How candidates share the attacked system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LedgerMode {
    /// A fresh system (and budget ledger) per candidate.
    #[default]
    Independent,
    /// One live system answers every candidate's probes in turn.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    /// Corpus the candidates are inserted into; its queries are unused.
    pub base: WorkloadSpec,
    /// Number of (member, non-member) candidate pairs.
    pub pairs: usize,
    #[serde(default = "default_probes")]
    pub probes_per_candidate: usize,
    #[serde(default)]
    pub ledger_mode: LedgerMode,
    pub seed: u64,
    /// Zero-noise mechanisms; voids every privacy claim.
    #[serde(default)]
    pub noiseless: bool,
}

fn default_probes() -> usize {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_id: String,
    pub member: bool,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub scores: Vec<CandidateScore>,
    pub roc: RocCurve,
}

struct Candidate {
    doc: Document,
    member: bool,
}

/// Candidate pairs: both documents of a pair are drawn identically; a coin
/// decides which one joins the corpus.
fn candidates(spec: &AttackSpec, noise: &mut NoiseSource) -> Vec<Candidate> {
    let dim = spec.base.dim;
    let answer_span = (spec.base.vocab_size - FIRST_ANSWER_TOKEN as usize) as f64;
    let mut out = Vec::with_capacity(2 * spec.pairs);
    for pair in 0..spec.pairs {
        let member_slot = usize::from(noise.uniform() < 0.5);
        for slot in 0..2 {
            let id = format!("c{pair:04}{}", ['a', 'b'][slot]);
            let answer = FIRST_ANSWER_TOKEN + ((noise.uniform() * answer_span) as Token).min(answer_span as Token - 1);
            let embedding = unit((0..dim).map(|_| gaussian(noise)).collect());
            out.push(Candidate {
                doc: Document {
                    tokens: vec![answer],
                    embedding,
                    fact: Some(Fact { key: id.clone(), answer }),
                    id,
                },
                member: slot == member_slot,
            });
        }
    }
    out
}

/// Runs the attack against `system`: builds the candidate corpus, probes
/// every candidate and scores the separation.
pub fn run_attack<G: TokenGenerator + ?Sized>(spec: &AttackSpec, system: &MethodConfig, gen: &G) -> Result<AttackResult> {
    if spec.pairs == 0 || spec.probes_per_candidate == 0 {
        return Err(Error::InvalidParameter("attack needs at least one pair and one probe".into()));
    }
    system.validate()?;
    let mut root = NoiseSource::new(spec.seed);
    root.set_noiseless(spec.noiseless);
    let base = generate_synthetic_workload(&spec.base.clone().with_seed(spec.seed))?;
    let cands = candidates(spec, &mut root.substream("attack/candidates"));

    let mut docs = base.corpus.docs().to_vec();
    docs.extend(cands.iter().filter(|c| c.member).map(|c| c.doc.clone()));
    let corpus = Corpus::new(docs)?;

    let mut probe_noise = root.substream("attack/probes");
    let sets = cands
        .iter()
        .map(|c| build_probe_set(&c.doc, spec.probes_per_candidate, &mut probe_noise))
        .collect::<Result<Vec<_>>>()?;

    let scores: Vec<f64> = match spec.ledger_mode {
        LedgerMode::Independent => sets
            .iter()
            .map(|set| {
                let mut noise = root.substream(&format!("attack/system/{}", set.target_doc_id));
                membership_score(set, system, &corpus, gen, &mut noise)
            })
            .collect::<Result<_>>()?,
        LedgerMode::Shared => {
            let all: Vec<QueryRecord> = sets.iter().flat_map(|s| s.queries()).collect();
            let report = system.run(&all, &corpus, gen, &mut root.substream("attack/system"))?;
            let mut answers = report.queries.iter().map(|q| q.answer.as_slice());
            sets.iter().map(|set| score_answers(set, answers.by_ref().take(set.probes.len()))).collect()
        }
    };

    let scores: Vec<CandidateScore> = cands
        .iter()
        .zip(scores)
        .map(|(c, score)| CandidateScore { candidate_id: c.doc.id.clone(), member: c.member, score })
        .collect();
    let split = |m: bool| scores.iter().filter(|s| s.member == m).map(|s| s.score).collect::<Vec<_>>();
    let roc = roc_auc(&split(true), &split(false))?;
    Ok(AttackResult { scores, roc })
}
