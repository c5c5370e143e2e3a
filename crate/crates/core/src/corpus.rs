//! Documents, queries, relevance scoring and retrieval primitives.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::Token;
use crate::noise::NoiseSource;

/// Id reserved for the padding document. Never present in a loaded corpus.
pub const EMPTY_DOC_ID: &str = "<empty>";

/// A planted `(question key, answer token)` pair. Serialized as a two-element array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, Token)", into = "(String, Token)")]
pub struct Fact {
    pub key: String,
    pub answer: Token,
}

impl From<(String, Token)> for Fact {
    fn from((key, answer): (String, Token)) -> Self {
        Fact { key, answer }
    }
}

impl From<Fact> for (String, Token) {
    fn from(f: Fact) -> Self {
        (f.key, f.answer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<Token>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<Fact>,
}

impl Document {
    /// The padding document: no tokens, zero embedding, no fact.
    pub fn empty(dim: usize) -> Self {
        Document {
            id: EMPTY_DOC_ID.to_string(),
            tokens: Vec::new(),
            embedding: vec![0.0; dim],
            fact: None,
        }
    }

    pub fn is_padding(&self) -> bool {
        self.id == EMPTY_DOC_ID
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub id: String,
    pub tokens: Vec<Token>,
    pub embedding: Vec<f64>,
    pub answers: Vec<Vec<Token>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl QueryRecord {
    /// The fact key this query asks about: its correlation group when it has
    /// one, otherwise its own id. Queries in one group ask about the same fact.
    pub fn fact_key(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.id)
    }
}

/// An immutable, validated document collection.
#[derive(Clone, Debug)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
    dim: usize,
    empty: Document,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let dim = docs.first().map_or(0, |d| d.embedding.len());
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.is_padding() {
                return Err(Error::InvalidParameter(format!(
                    "document id {EMPTY_DOC_ID} is reserved"
                )));
            }
            if d.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d.embedding.len(),
                });
            }
            if index.insert(d.id.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate document id {}", d.id)));
            }
        }
        Ok(Corpus {
            docs,
            index,
            dim,
            empty: Document::empty(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn empty_document(&self) -> &Document {
        &self.empty
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    /// Checks that every query matches the corpus embedding dimension.
    pub fn check_queries(&self, queries: &[QueryRecord]) -> Result<()> {
        for q in queries {
            if q.embedding.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: q.embedding.len(),
                });
            }
            if q.answers.is_empty() {
                return Err(Error::InvalidParameter(format!("query {} has no gold answers", q.id)));
            }
        }
        Ok(())
    }
}

/// Discretization of the relevance range into equal-width bins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreBins {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

/// One bin `[lower, upper)`; the topmost bin is closed at `upper`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub closed_above: bool,
}

impl Bin {
    pub fn contains(&self, score: f64) -> bool {
        score >= self.lower && (score < self.upper || (self.closed_above && score <= self.upper))
    }
}

impl Default for ScoreBins {
    fn default() -> Self {
        ScoreBins { lo: 70.0, hi: 100.0, width: 0.2 }
    }
}

impl ScoreBins {
    pub fn new(lo: f64, hi: f64, width: f64) -> Result<Self> {
        let bins = ScoreBins { lo, hi, width };
        bins.count()?;
        Ok(bins)
    }

    /// Number of bins; errors unless `hi − lo` is a whole multiple of `width`.
    pub fn count(&self) -> Result<usize> {
        let ScoreBins { lo, hi, width } = *self;
        if !(lo.is_finite() && hi.is_finite() && width.is_finite()) || hi <= lo || width <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "invalid score bins lo={lo} hi={hi} width={width}"
            )));
        }
        let ratio = (hi - lo) / width;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "score range {lo}..{hi} is not a multiple of bin width {width}"
            )));
        }
        Ok(n as usize)
    }

    /// Lower edge of ascending bin `i` (edge `count()` is `hi`).
    pub fn edge(&self, i: usize) -> f64 {
        let n = self.count().expect("validated bins");
        if i >= n {
            self.hi
        } else {
            self.lo + i as f64 * self.width
        }
    }

    /// Ascending index of the bin holding `score`, clamped into range.
    pub fn ascending_index(&self, score: f64) -> usize {
        let n = self.count().expect("validated bins");
        if score >= self.hi {
            return n - 1;
        }
        if score <= self.lo {
            return 0;
        }
        let mut i = (((score - self.lo) / self.width).floor() as usize).min(n - 1);
        // Reconcile float rounding with the reported edges.
        while i > 0 && self.edge(i) > score {
            i -= 1;
        }
        while i + 1 < n && self.edge(i + 1) <= score {
            i += 1;
        }
        i
    }

    /// Bins ordered from the highest scores to the lowest.
    pub fn descending(&self) -> Result<Vec<Bin>> {
        let n = self.count()?;
        Ok((0..n)
            .rev()
            .map(|i| Bin {
                lower: self.edge(i),
                upper: self.edge(i + 1),
                closed_above: i + 1 == n,
            })
            .collect())
    }

    /// Affine map of an inner product in [−1, 1] onto [lo, hi].
    pub fn rescale(&self, inner_product: f64) -> f64 {
        let ip = inner_product.clamp(-1.0, 1.0);
        self.lo + (ip + 1.0) / 2.0 * (self.hi - self.lo)
    }
}

/// Bins from highest to lowest score.
pub fn enumerate_bins_descending(bins: &ScoreBins) -> Result<Vec<Bin>> {
    bins.descending()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relevance of `doc` to `query`: the embedding inner product rescaled into
/// the bin range. Padding scores `lo`.
pub fn relevance(doc: &Document, query: &QueryRecord, bins: &ScoreBins) -> Result<f64> {
    if doc.is_padding() {
        return Ok(bins.lo);
    }
    if doc.embedding.len() != query.embedding.len() {
        return Err(Error::DimensionMismatch {
            expected: doc.embedding.len(),
            actual: query.embedding.len(),
        });
    }
    Ok(bins.rescale(dot(&doc.embedding, &query.embedding)))
}

/// A document paired with its relevance to the current query.
#[derive(Clone, Copy, Debug)]
pub struct Scored<'a> {
    pub doc: &'a Document,
    pub score: f64,
}

/// Descending score, ties by ascending id.
pub fn rank_order(a: &Scored<'_>, b: &Scored<'_>) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc.id.cmp(&b.doc.id))
}

/// The `k` best candidates in rank order, padded with `padding` up to
/// exactly `k` entries.
pub fn top_k_scored<'a>(mut candidates: Vec<Scored<'a>>, k: usize, padding: Scored<'a>) -> Vec<Scored<'a>> {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k, rank_order);
        candidates.truncate(k);
    }
    candidates.sort_by(rank_order);
    candidates.resize(k, padding);
    candidates
}

/// Scores `candidates` against `query` and returns exactly `k` documents.
pub fn top_k<'a>(
    corpus: &'a Corpus,
    candidates: &[&'a Document],
    k: usize,
    query: &QueryRecord,
    bins: &ScoreBins,
) -> Result<Vec<&'a Document>> {
    let scored = candidates
        .iter()
        .map(|d| Ok(Scored { doc: d, score: relevance(d, query, bins)? }))
        .collect::<Result<Vec<_>>>()?;
    let padding = Scored { doc: corpus.empty_document(), score: bins.lo };
    Ok(top_k_scored(scored, k, padding).into_iter().map(|s| s.doc).collect())
}

/// Includes each document independently with probability `gamma`.
///
/// One uniform is consumed per document, visiting documents in ascending id
/// order; the result is in that order too.
pub fn poisson_sample<'a>(
    docs: &[&'a Document],
    gamma: f64,
    noise: &mut NoiseSource,
) -> Result<Vec<&'a Document>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("sampling rate must lie in (0, 1), got {gamma}")));
    }
    let mut ordered: Vec<&Document> = docs.to_vec();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(ordered.into_iter().filter(|_| noise.uniform() < gamma).collect())
}

/// Ids of the `reference_k` most relevant documents of the whole corpus.
pub fn true_top_ids(corpus: &Corpus, query: &QueryRecord, reference_k: usize, bins: &ScoreBins) -> Result<BTreeSet<String>> {
    let scored = corpus
        .docs()
        .iter()
        .map(|d| Ok(Scored { doc: d, score: relevance(d, query, bins)? }))
        .collect::<Result<Vec<_>>>()?;
    let padding = Scored { doc: corpus.empty_document(), score: bins.lo };
    Ok(top_k_scored(scored, reference_k.min(corpus.len()), padding)
        .into_iter()
        .map(|s| s.doc.id.clone())
        .collect())
}

/// Fraction of `retrieved` that lies in `reference`; 1 when nothing was retrieved.
pub fn precision_of(retrieved: &[String], reference: &BTreeSet<String>) -> f64 {
    let real: Vec<&String> = retrieved.iter().filter(|id| id.as_str() != EMPTY_DOC_ID).collect();
    if real.is_empty() {
        return 1.0;
    }
    real.iter().filter(|id| reference.contains(id.as_str())).count() as f64 / real.len() as f64
}

/// Mean per-query share of retrieved documents that are among the true
/// top-`reference_k`, in percent.
pub fn retrieval_precision(
    retrieved: &[Vec<String>],
    reference_k: usize,
    corpus: &Corpus,
    queries: &[QueryRecord],
    bins: &ScoreBins,
) -> Result<f64> {
    if reference_k > corpus.len() {
        return Err(Error::InvalidParameter(format!(
            "reference k {reference_k} exceeds corpus size {}",
            corpus.len()
        )));
    }
    if retrieved.len() != queries.len() {
        return Err(Error::InvalidParameter("one retrieved set per query required".into()));
    }
    if queries.is_empty() {
        return Ok(100.0);
    }
    let mut sum = 0.0;
    for (set, q) in retrieved.iter().zip(queries) {
        sum += precision_of(set, &true_top_ids(corpus, q, reference_k, bins)?);
    }
    Ok(100.0 * sum / queries.len() as f64)
}

fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    Corpus::new(read_jsonl(reader)?)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, out: W) -> Result<()> {
    write_jsonl(corpus.docs(), out)
}

pub fn read_queries<R: BufRead>(reader: R) -> Result<Vec<QueryRecord>> {
    read_jsonl(reader)
}

pub fn write_queries<W: Write>(queries: &[QueryRecord], out: W) -> Result<()> {
    write_jsonl(queries, out)
}
