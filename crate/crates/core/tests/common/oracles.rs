// Reference implementations written straight from the algorithm
// descriptions, shared by the core tests and the acceptance runner.
#![allow(dead_code)]

use murag::corpus::{Document, QueryRecord};
use murag::error::Result;
use murag::generator::TokenGenerator;
use murag::mechanisms::Token;

pub const EOS: Token = 0;

/// What the generator says at one decoding step.
#[derive(Clone, Debug)]
pub struct Step {
    pub baseline: Token,
    pub votes: Vec<Token>,
}

/// Noiseless DP-RAG: s = votes for the baseline; s ≤ θ means a discovery that
/// emits the most-voted token (lowest on ties) and uses one of `budget`.
pub fn dp_rag_noiseless(steps: &[Step], theta: f64, budget: u64, vocab: usize, t_max: usize) -> Vec<Token> {
    let mut left = budget;
    let mut out = Vec::new();
    for step in steps.iter().take(t_max) {
        let mut hist = vec![0u64; vocab];
        for &v in &step.votes {
            hist[v as usize] += 1;
        }
        let s = hist[step.baseline as usize] as f64;
        let y = if s <= theta {
            left -= 1;
            let mut best = 0;
            for j in 1..vocab {
                if hist[j] > hist[best] {
                    best = j;
                }
            }
            best as Token
        } else {
            step.baseline
        };
        out.push(y);
        if y == EOS || left == 0 {
            break;
        }
    }
    out
}

/// Generator that replays `steps`: empty context gets the baseline, a context
/// starting with document `v{i}` gets voter `i`'s vote.
pub struct Scripted {
    pub steps: Vec<Step>,
    pub vocab: usize,
}

impl TokenGenerator for Scripted {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_token(&self, _q: &QueryRecord, context: &[&Document], prefix: &[Token]) -> Result<Token> {
        let step = &self.steps[prefix.len()];
        Ok(match context.first() {
            None => step.baseline,
            Some(d) => step.votes[d.id[1..].parse::<usize>().unwrap()],
        })
    }
}

pub fn voter_docs(m: usize) -> Vec<Document> {
    (0..m)
        .map(|i| Document { id: format!("v{i}"), tokens: vec![], embedding: vec![], fact: None })
        .collect()
}

pub fn blank_query() -> QueryRecord {
    QueryRecord { id: "q".into(), tokens: vec![], embedding: vec![], answers: vec![vec![2]], group: None }
}

/// Every non-decreasing vote vector of length `m` over `vocab` tokens, i.e.
/// every vote histogram.
pub fn vote_multisets(m: usize, vocab: usize) -> Vec<Vec<Token>> {
    fn rec(m: usize, vocab: usize, from: usize, cur: &mut Vec<Token>, out: &mut Vec<Vec<Token>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for t in from..vocab {
            cur.push(t as Token);
            rec(m, vocab, t, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, vocab, 0, &mut Vec::new(), &mut out);
    out
}

/// Exponential-mechanism distribution computed directly, no stabilisation.
pub fn em_closed_form(counts: &[u64], eps: f64) -> Vec<f64> {
    let w: Vec<f64> = counts.iter().map(|&c| (eps * c as f64 / 2.0).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

/// Two-sided Laplace CDF.
pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// Kolmogorov–Smirnov distance between a sample and a CDF.
pub fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Exhaustively checks noiseless `dp_rag_answer` against the oracle for one
/// shape. Every step of every decoding path ranges over all baselines and all
/// vote histograms. Returns the number of instances compared.
pub fn check_dp_rag_exhaustive(m: usize, vocab: usize, t_max: usize, budget: u64, theta: f64) -> usize {
    use murag::dp_rag::{dp_rag_answer, DpRagParams};
    use murag::epsilon::EpsilonAmount;
    use murag::noise::NoiseSource;

    let params = DpRagParams {
        eps_total: EpsilonAmount::from_micros(2_000_000 * budget),
        eps_token: EpsilonAmount::from_micros(2_000_000),
        max_tokens: t_max,
        num_voters: m,
        docs_per_voter: 1,
        vote_threshold: theta,
    };
    let docs = voter_docs(m);
    let refs: Vec<&Document> = docs.iter().collect();
    let query = blank_query();
    let options: Vec<Step> = (0..vocab)
        .flat_map(|b| vote_multisets(m, vocab).into_iter().map(move |votes| Step { baseline: b as Token, votes }))
        .collect();

    let mut gen = Scripted { steps: Vec::new(), vocab };
    let mut count = 0;
    // depth-first over decoding paths; a path stops growing once it halts
    fn walk(
        gen: &mut Scripted,
        options: &[Step],
        params: &DpRagParams,
        refs: &[&Document],
        query: &QueryRecord,
        count: &mut usize,
    ) {
        let (t_max, theta, budget) = (params.max_tokens, params.vote_threshold, params.discovery_budget());
        let depth = gen.steps.len();
        // the path is complete when decoding would not read one more step
        let done = depth == t_max || {
            gen.steps.push(options[0].clone());
            let n = dp_rag_noiseless(&gen.steps, theta, budget, gen.vocab, depth + 1).len();
            gen.steps.pop();
            n == depth
        };
        if done {
            let expected = dp_rag_noiseless(&gen.steps, theta, budget, gen.vocab, t_max);
            let got = dp_rag_answer(query, refs, gen, params, &mut NoiseSource::noiseless(0)).unwrap();
            assert_eq!(got.tokens, expected, "steps {:?} theta {theta}", gen.steps);
            *count += 1;
            return;
        }
        for opt in options {
            gen.steps.push(opt.clone());
            walk(gen, options, params, refs, query, count);
            gen.steps.pop();
        }
    }
    walk(&mut gen, &options, &params, &refs, &query, &mut count);
    count
}
