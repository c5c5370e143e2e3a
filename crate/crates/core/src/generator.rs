//! Greedy token generators.
//!
//! A [`TokenGenerator`] maps `(query, context documents, prefix)` to the next
//! token deterministically. [`StubGenerator`] is a scripted stand-in for a
//! language model that answers from planted facts; [`RemoteGenerator`]
//! forwards calls to an HTTP service.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QueryRecord};
use crate::error::{Error, Result};
use crate::mechanisms::Token;
use crate::noise::{stable_hash, u64_to_open01};

/// End-of-sequence token.
pub const EOS: Token = 0;
/// Token the stub emits when it does not know the answer.
pub const WRONG: Token = 1;
/// First token index usable as an answer.
pub const FIRST_ANSWER_TOKEN: Token = 2;

pub trait TokenGenerator {
    fn vocab_size(&self) -> usize;

    /// Next token given the query, the (possibly empty) context and the
    /// tokens generated so far. Must be deterministic.
    fn next_token(&self, query: &QueryRecord, context: &[&Document], prefix: &[Token]) -> Result<Token>;
}

impl<G: TokenGenerator + ?Sized> TokenGenerator for &G {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_token(&self, query: &QueryRecord, context: &[&Document], prefix: &[Token]) -> Result<Token> {
        (**self).next_token(query, context, prefix)
    }
}

/// Scripted generator for desk-scale experiments.
///
/// With a context document whose planted fact matches the query's fact key,
/// it emits that document's answer token and then EOS. Otherwise it answers
/// from "parametric memory": the query's first gold answer with probability
/// `p_base`, else [`WRONG`], then EOS. The coin is a fixed function of the
/// query id and the stub seed, so every call for a query agrees. Context
/// without a matching fact is ignored, which makes an irrelevant or padded
/// context behave exactly like no context.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubGenerator {
    pub vocab_size: usize,
    pub p_base: f64,
    #[serde(default)]
    pub seed: u64,
}

impl StubGenerator {
    pub fn new(vocab_size: usize, p_base: f64, seed: u64) -> Result<Self> {
        let stub = StubGenerator { vocab_size, p_base, seed };
        stub.validate()?;
        Ok(stub)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= FIRST_ANSWER_TOKEN as usize {
            return Err(Error::InvalidParameter(format!(
                "stub vocabulary must exceed {FIRST_ANSWER_TOKEN} tokens"
            )));
        }
        if !(0.0..=1.0).contains(&self.p_base) {
            return Err(Error::InvalidParameter(format!("p_base must lie in [0, 1], got {}", self.p_base)));
        }
        Ok(())
    }

    /// Whether the context-free stub knows the answer to `query`.
    pub fn knows(&self, query: &QueryRecord) -> bool {
        let mut key = self.seed.to_le_bytes().to_vec();
        key.extend_from_slice(query.id.as_bytes());
        u64_to_open01(stable_hash(&key)) < self.p_base
    }

    /// The full sequence the stub would emit, without the trailing EOS.
    pub fn script(&self, query: &QueryRecord, context: &[&Document]) -> Vec<Token> {
        let key = query.fact_key();
        if let Some(fact) = context.iter().filter_map(|d| d.fact.as_ref()).find(|f| f.key == key) {
            return vec![fact.answer];
        }
        match query.answers.first() {
            Some(gold) if self.knows(query) => gold.clone(),
            _ => vec![WRONG],
        }
    }
}

impl TokenGenerator for StubGenerator {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token(&self, query: &QueryRecord, context: &[&Document], prefix: &[Token]) -> Result<Token> {
        let script = self.script(query, context);
        let token = script.get(prefix.len()).copied().unwrap_or(EOS);
        if token as usize >= self.vocab_size {
            return Err(Error::TokenOutOfRange { token: token as usize, vocab_size: self.vocab_size });
        }
        Ok(token)
    }
}

/// Request body sent to a remote generator.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RemoteRequest {
    pub query_tokens: Vec<Token>,
    pub context_token_lists: Vec<Vec<Token>>,
    pub prefix_tokens: Vec<Token>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteGeneratorConfig {
    pub endpoint: String,
    pub vocab_size: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    2
}

/// Generator backed by an HTTP endpoint speaking
/// `POST {query_tokens, context_token_lists, prefix_tokens}` → `{token}`.
pub struct RemoteGenerator {
    config: RemoteGeneratorConfig,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(config: RemoteGeneratorConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        RemoteGenerator { config, agent }
    }

    fn call_once(&self, body: &RemoteRequest) -> Result<Token> {
        let response = self.agent.post(&self.config.endpoint).send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code >= 500 || code == 429 => {
                return Err(Error::GeneratorRetriable(format!("HTTP {code}")));
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(Error::GeneratorMalformed(format!("HTTP {code}")));
            }
            Err(e) => return Err(Error::GeneratorRetriable(e.to_string())),
        };
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::GeneratorMalformed(e.to_string()))?;
        let token = value
            .get("token")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::GeneratorMalformed(format!("missing integer \"token\" in {value}")))?;
        if token as usize >= self.config.vocab_size {
            return Err(Error::GeneratorMalformed(format!(
                "token {token} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(token as Token)
    }
}

impl TokenGenerator for RemoteGenerator {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn next_token(&self, query: &QueryRecord, context: &[&Document], prefix: &[Token]) -> Result<Token> {
        let body = RemoteRequest {
            query_tokens: query.tokens.clone(),
            context_token_lists: context.iter().map(|d| d.tokens.clone()).collect(),
            prefix_tokens: prefix.to_vec(),
        };
        let mut attempt = 0;
        loop {
            match self.call_once(&body) {
                Err(e) if e.is_retriable() && attempt < self.config.retries => {
                    attempt += 1;
                    thread::sleep(Duration::from_millis(20 * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }
}

/// Greedy decoding until EOS or `max_tokens`. EOS is not included.
pub fn greedy_decode<G: TokenGenerator + ?Sized>(
    gen: &G,
    query: &QueryRecord,
    context: &[&Document],
    max_tokens: usize,
) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    while out.len() < max_tokens {
        let t = gen.next_token(query, context, &out)?;
        if t == EOS {
            break;
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Fact;

    fn query(id: &str) -> QueryRecord {
        QueryRecord { id: id.into(), tokens: vec![5], embedding: vec![], answers: vec![vec![7]], group: None }
    }

    fn fact_doc(key: &str, answer: Token) -> Document {
        Document {
            id: format!("doc-{key}"),
            tokens: vec![answer],
            embedding: vec![],
            fact: Some(Fact { key: key.into(), answer }),
        }
    }

    #[test]
    fn stub_answers_from_matching_fact() {
        let stub = StubGenerator::new(16, 0.0, 1).unwrap();
        let q = query("q1");
        let d = fact_doc("q1", 9);
        assert_eq!(stub.next_token(&q, &[&d], &[]).unwrap(), 9);
        assert_eq!(stub.next_token(&q, &[&d], &[9]).unwrap(), EOS);
    }

    #[test]
    fn stub_context_free_floor_and_ceiling() {
        let q = query("q1");
        let never = StubGenerator::new(16, 0.0, 1).unwrap();
        assert_eq!(never.next_token(&q, &[], &[]).unwrap(), WRONG);
        assert_eq!(never.next_token(&q, &[], &[WRONG]).unwrap(), EOS);
        let always = StubGenerator::new(16, 1.0, 1).unwrap();
        assert_eq!(always.next_token(&q, &[], &[]).unwrap(), 7);
    }

    #[test]
    fn stub_ignores_unrelated_context() {
        let stub = StubGenerator::new(16, 0.5, 3).unwrap();
        let q = query("q1");
        let other = fact_doc("q2", 11);
        let empty = Document::empty(0);
        for prefix in [&[][..], &[7][..], &[WRONG][..]] {
            let free = stub.next_token(&q, &[], prefix).unwrap();
            assert_eq!(stub.next_token(&q, &[&other], prefix).unwrap(), free);
            assert_eq!(stub.next_token(&q, &[&empty], prefix).unwrap(), free);
        }
    }

    #[test]
    fn stub_p_base_is_a_rate() {
        let stub = StubGenerator::new(16, 0.3, 11).unwrap();
        let known = (0..10_000).filter(|i| stub.knows(&query(&format!("q{i}")))).count();
        assert!((2800..3200).contains(&known), "{known}");
    }

    #[test]
    fn stub_validation() {
        assert!(StubGenerator::new(2, 0.5, 0).is_err());
        assert!(StubGenerator::new(8, 1.5, 0).is_err());
    }

    #[test]
    fn greedy_stops_at_eos() {
        let stub = StubGenerator::new(16, 0.0, 1).unwrap();
        let q = query("q1");
        let d = fact_doc("q1", 9);
        assert_eq!(greedy_decode(&stub, &q, &[&d], 10).unwrap(), vec![9]);
        assert_eq!(greedy_decode(&stub, &q, &[], 10).unwrap(), vec![WRONG]);
        assert_eq!(greedy_decode(&stub, &q, &[], 0).unwrap(), Vec::<Token>::new());
    }
}
