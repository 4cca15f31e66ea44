//! Fixed-point holdings amounts.
//!
//! Aggregations in the analytics modules (distance bins, allocation shares,
//! restatement diffs) accumulate in integer micro-units of one USD million so
//! that partitions of a total add back to the total exactly, regardless of
//! summation order.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Units per USD million.
pub const UNITS_PER_MN: i128 = 1_000_000;

/// USD million stored as an integer count of 1e-6 USD million (one US dollar).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Amount(i128);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    /// Rounds `usd_mn` to the nearest dollar.
    pub fn from_usd_mn(usd_mn: f64) -> Self {
        Amount((usd_mn * UNITS_PER_MN as f64).round() as i128)
    }

    pub fn from_units(units: i128) -> Self {
        Amount(units)
    }

    pub fn units(self) -> i128 {
        self.0
    }

    pub fn usd_mn(self) -> f64 {
        self.0 as f64 / UNITS_PER_MN as f64
    }

    pub fn usd_bn(self) -> f64 {
        self.0 as f64 / (UNITS_PER_MN as f64 * 1000.0)
    }

    pub fn abs(self) -> Self {
        Amount(self.0.abs())
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Ratio of two amounts, `None` when the denominator is zero.
    pub fn ratio(self, total: Amount) -> Option<f64> {
        (total.0 != 0).then(|| self.0 as f64 / total.0 as f64)
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl Neg for Amount {
    type Output = Amount;
    fn neg(self) -> Amount {
        Amount(-self.0)
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        iter.copied().sum()
    }
}

/// Formats as decimal USD million with all six fractional digits.
impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / UNITS_PER_MN as u128;
        let frac = abs % UNITS_PER_MN as u128;
        write!(f, "{sign}{whole}.{frac:06}")
    }
}
