//! Exact rational time indices.
//!
//! Low-frequency observations sit on integers, high-frequency lags on
//! multiples of `1/m`. Keys are compared exactly, never with a tolerance.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeIndex(Ratio<i64>);

impl TimeIndex {
    pub fn new(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Schema("time denominator must be nonzero".into()));
        }
        Ok(TimeIndex(Ratio::new(num, den)))
    }

    pub fn integer(value: i64) -> Self {
        TimeIndex(Ratio::from_integer(value))
    }

    pub fn zero() -> Self {
        TimeIndex(Ratio::zero())
    }

    /// Reduced numerator; the denominator is always positive.
    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn as_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// Whether this time lies on the `1/m` lattice.
    pub fn is_multiple_of(&self, m: u32) -> bool {
        (self.0 * Ratio::from_integer(m as i64)).is_integer()
    }

    /// The key `self - h - lag/m` reached by the fractional lag operator.
    pub fn lagged(&self, h: TimeIndex, lag: usize, m: u32) -> TimeIndex {
        TimeIndex(self.0 - h.0 - Ratio::new(lag as i64, m as i64))
    }

    /// Smallest integer greater than or equal to this value.
    pub fn ceil(&self) -> i64 {
        self.0.ceil().to_integer()
    }
}

impl Add for TimeIndex {
    type Output = TimeIndex;
    fn add(self, rhs: TimeIndex) -> TimeIndex {
        TimeIndex(self.0 + rhs.0)
    }
}

impl Sub for TimeIndex {
    type Output = TimeIndex;
    fn sub(self, rhs: TimeIndex) -> TimeIndex {
        TimeIndex(self.0 - rhs.0)
    }
}

impl fmt::Display for TimeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl fmt::Debug for TimeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for TimeIndex {
    type Err = Error;

    /// Accepts `NUM/DEN` or a bare integer.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse = |part: &str| {
            part.trim()
                .parse::<i64>()
                .map_err(|_| Error::Schema(format!("invalid time index `{s}`")))
        };
        match s.split_once('/') {
            Some((num, den)) => TimeIndex::new(parse(num)?, parse(den)?),
            None => Ok(TimeIndex::integer(parse(s)?)),
        }
    }
}

impl Serialize for TimeIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TimeIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_keys_are_exact() {
        let t = TimeIndex::integer(2);
        let h = TimeIndex::new(1, 3).unwrap();
        let keys: Vec<_> = (1..=3).map(|i| t.lagged(h, i, 3)).collect();
        assert_eq!(
            keys,
            vec![
                TimeIndex::new(4, 3).unwrap(),
                TimeIndex::integer(1),
                TimeIndex::new(2, 3).unwrap()
            ]
        );
    }

    #[test]
    fn parse_and_display() {
        let t: TimeIndex = "6/4".parse().unwrap();
        assert_eq!(t.to_string(), "3/2");
        let t: TimeIndex = "7".parse().unwrap();
        assert_eq!(t, TimeIndex::integer(7));
        assert!("1/0".parse::<TimeIndex>().is_err());
        assert!("x".parse::<TimeIndex>().is_err());
        let neg = TimeIndex::new(1, -3).unwrap();
        assert_eq!(neg.denom(), 3);
        assert_eq!(neg.numer(), -1);
    }

    #[test]
    fn lattice_membership() {
        assert!(TimeIndex::new(5, 3).unwrap().is_multiple_of(3));
        assert!(!TimeIndex::new(1, 2).unwrap().is_multiple_of(3));
        assert!(TimeIndex::integer(4).is_multiple_of(1));
    }
}
