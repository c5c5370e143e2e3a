//! Per-document individual privacy filter.
//!
//! Each document starts with `M·ε_q` and is charged whenever a query uses it.
//! A document whose remaining budget is below the next charge leaves the
//! active set for good. The ledger is the only component that sees raw
//! budgets; retrieval code asks it for active sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::epsilon::EpsilonAmount;
use crate::error::{Error, Result};

/// One applied charge, as exported to `charges.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Charge {
    pub query_index: usize,
    pub doc_id: String,
    pub micro_eps: u64,
}

#[derive(Clone, Debug)]
pub struct BudgetLedger {
    remaining: HashMap<String, EpsilonAmount>,
    initial: EpsilonAmount,
    max_retrievals: u32,
    eps_q: EpsilonAmount,
    log: Vec<Charge>,
}

impl BudgetLedger {
    /// Gives every document an initial budget of `max_retrievals · eps_q`.
    pub fn new<I, S>(doc_ids: I, max_retrievals: u32, eps_q: EpsilonAmount) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if max_retrievals == 0 {
            return Err(Error::InvalidParameter("M must be at least 1".into()));
        }
        if eps_q.is_zero() {
            return Err(Error::InvalidParameter("eps_q must be positive".into()));
        }
        let initial = eps_q
            .checked_mul(u64::from(max_retrievals))
            .ok_or_else(|| Error::InvalidParameter("M·eps_q overflows".into()))?;
        let mut remaining = HashMap::new();
        for id in doc_ids {
            let id = id.into();
            if remaining.insert(id.clone(), initial).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate document id {id}")));
            }
        }
        if remaining.is_empty() {
            return Err(Error::InvalidParameter("ledger needs at least one document".into()));
        }
        Ok(BudgetLedger {
            remaining,
            initial,
            max_retrievals,
            eps_q,
            log: Vec::new(),
        })
    }

    pub fn initial_budget(&self) -> EpsilonAmount {
        self.initial
    }

    pub fn max_retrievals(&self) -> u32 {
        self.max_retrievals
    }

    pub fn eps_q(&self) -> EpsilonAmount {
        self.eps_q
    }

    pub fn len(&self) -> usize {
        self.remaining.len()
    }

    pub fn is_empty(&self) -> bool {
        self.remaining.is_empty()
    }

    pub fn remaining(&self, doc_id: &str) -> Option<EpsilonAmount> {
        self.remaining.get(doc_id).copied()
    }

    /// True when `doc_id` is tracked and can still afford `required`.
    pub fn is_active(&self, doc_id: &str, required: EpsilonAmount) -> bool {
        self.remaining.get(doc_id).is_some_and(|r| *r >= required)
    }

    /// Ids whose remaining budget is at least `required`, in id order.
    pub fn active_set(&self, required: EpsilonAmount) -> BTreeSet<&str> {
        debug_assert!(!required.is_zero(), "active_set requires a positive charge");
        self.remaining
            .iter()
            .filter(|(_, r)| **r >= required)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Deducts `amount` from every id in `ids`.
    ///
    /// All ids are checked before any is charged, so a failed call leaves the
    /// ledger untouched. A failure means the caller skipped the active-set
    /// filter, which is a bug: the run must abort.
    pub fn charge<'a, I>(&mut self, ids: I, amount: EpsilonAmount, query_index: usize) -> Result<()>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let ids: BTreeSet<&str> = ids.into_iter().collect();
        for id in &ids {
            let remaining = self
                .remaining
                .get(*id)
                .ok_or_else(|| Error::UnknownDocument((*id).to_string()))?;
            if *remaining < amount {
                return Err(Error::FilterViolation {
                    doc_id: (*id).to_string(),
                    remaining: remaining.micros(),
                    requested: amount.micros(),
                });
            }
        }
        for id in ids {
            let slot = self.remaining.get_mut(id).expect("checked above");
            *slot = slot.checked_sub(amount).expect("checked above");
            self.log.push(Charge {
                query_index,
                doc_id: id.to_string(),
                micro_eps: amount.micros(),
            });
        }
        Ok(())
    }

    /// The ε-DP guarantee of the whole run: `M·ε_q`.
    ///
    /// Per-document filters are (∞, ε)-RDP, which coincides with pure ε-DP.
    pub fn total_privacy_claim(&self) -> EpsilonAmount {
        self.initial
    }

    pub fn charge_log(&self) -> &[Charge] {
        &self.log
    }

    /// Sum of all logged charges against `doc_id`.
    pub fn charged_total(&self, doc_id: &str) -> EpsilonAmount {
        EpsilonAmount::from_micros(
            self.log
                .iter()
                .filter(|c| c.doc_id == doc_id)
                .map(|c| c.micro_eps)
                .sum(),
        )
    }

    /// Remaining budget of every document, in id order.
    pub fn remaining_map(&self) -> BTreeMap<&str, EpsilonAmount> {
        self.remaining.iter().map(|(id, r)| (id.as_str(), *r)).collect()
    }

    /// Rebuilds a ledger by re-applying a charge log to fresh budgets.
    pub fn replay<I, S>(
        doc_ids: I,
        max_retrievals: u32,
        eps_q: EpsilonAmount,
        log: &[Charge],
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ledger = Self::new(doc_ids, max_retrievals, eps_q)?;
        for c in log {
            ledger.charge([c.doc_id.as_str()], EpsilonAmount::from_micros(c.micro_eps), c.query_index)?;
        }
        Ok(ledger)
    }

    /// Writes the charge log as JSON lines.
    pub fn write_charge_log<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.log {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
