//! Exact privacy-budget arithmetic.
//!
//! Every budget in the crate is an integer count of micro-epsilons (10⁻⁶ ε).
//! Floating-point values are quantized once, on the way in, and from then on
//! filter decisions are integer comparisons.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Micro-epsilon units in one ε.
pub const MICROS_PER_EPS: u64 = 1_000_000;

/// A non-negative privacy budget stored in micro-epsilon units.
///
/// Serialized as a plain number of ε; reading rounds to the nearest micro-ε.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct EpsilonAmount(u64);

impl From<EpsilonAmount> for f64 {
    fn from(e: EpsilonAmount) -> f64 {
        e.as_f64()
    }
}

impl TryFrom<f64> for EpsilonAmount {
    type Error = Error;

    fn try_from(eps: f64) -> Result<Self> {
        EpsilonAmount::from_eps(eps)
    }
}

impl EpsilonAmount {
    pub const ZERO: EpsilonAmount = EpsilonAmount(0);

    pub const fn from_micros(micros: u64) -> Self {
        EpsilonAmount(micros)
    }

    /// Quantizes `eps` to the nearest micro-epsilon.
    pub fn from_eps(eps: f64) -> Result<Self> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and non-negative, got {eps}"
            )));
        }
        let micros = (eps * MICROS_PER_EPS as f64).round();
        if micros > u64::MAX as f64 {
            return Err(Error::InvalidParameter(format!("epsilon {eps} too large")));
        }
        Ok(EpsilonAmount(micros as u64))
    }

    /// Like [`EpsilonAmount::from_eps`] but also rejects zero.
    pub fn positive(eps: f64) -> Result<Self> {
        let amount = Self::from_eps(eps)?;
        if amount.is_zero() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive after quantization, got {eps}"
            )));
        }
        Ok(amount)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_EPS as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_sub(self, rhs: EpsilonAmount) -> Option<EpsilonAmount> {
        self.0.checked_sub(rhs.0).map(EpsilonAmount)
    }

    pub fn checked_add(self, rhs: EpsilonAmount) -> Option<EpsilonAmount> {
        self.0.checked_add(rhs.0).map(EpsilonAmount)
    }

    pub fn checked_mul(self, factor: u64) -> Option<EpsilonAmount> {
        self.0.checked_mul(factor).map(EpsilonAmount)
    }

    /// Exact halving; `None` when the micro count is odd.
    pub fn exact_half(self) -> Option<EpsilonAmount> {
        self.0.is_multiple_of(2).then_some(EpsilonAmount(self.0 / 2))
    }

    /// `floor(self / divisor)`; `None` for a zero divisor.
    pub fn whole_multiples_of(self, divisor: EpsilonAmount) -> Option<u64> {
        (divisor.0 != 0).then(|| self.0 / divisor.0)
    }

    /// True when `self` is a whole multiple of `unit`.
    pub fn is_multiple_of(self, unit: EpsilonAmount) -> bool {
        unit.0 != 0 && self.0.is_multiple_of(unit.0)
    }
}

impl Add for EpsilonAmount {
    type Output = EpsilonAmount;

    fn add(self, rhs: EpsilonAmount) -> EpsilonAmount {
        EpsilonAmount(self.0.checked_add(rhs.0).expect("epsilon overflow"))
    }
}

impl fmt::Display for EpsilonAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / MICROS_PER_EPS;
        let frac = self.0 % MICROS_PER_EPS;
        if frac == 0 {
            write!(f, "{whole}")
        } else {
            let digits = format!("{frac:06}");
            write!(f, "{whole}.{}", digits.trim_end_matches('0'))
        }
    }
}
