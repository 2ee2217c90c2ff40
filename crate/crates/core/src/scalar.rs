//! Scalar fields for derivative entries.
//!
//! Two kinds are supported: arbitrary-precision rationals (the default, and
//! the only kind used by the reduction pipeline and the correctness oracles)
//! and `f64` for user-supplied numeric dags. A tensor or dag is generic over
//! one kind; the type system rules out mixed arithmetic.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::Value;

use crate::error::{Error, Result};

/// Which scalar field a serialized dag uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    Rational,
    Float,
}

impl ScalarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarKind::Rational => "rational",
            ScalarKind::Float => "float",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rational" => Ok(ScalarKind::Rational),
            "float" => Ok(ScalarKind::Float),
            other => Err(Error::InvalidFormat(format!(
                "unknown scalar kind `{other}` (expected \"rational\" or \"float\")"
            ))),
        }
    }
}

/// Field operations plus the JSON codec used by the dag file format.
pub trait Scalar: Clone + PartialEq + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const KIND: ScalarKind;

    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;

    fn from_u64(v: u64) -> Self;
    fn to_json(&self) -> Value;
    fn from_json(v: &Value) -> Result<Self>;

    /// Equality as used by schedule verification: exact for rationals,
    /// mixed absolute/relative 1e-9 for floats.
    fn approx_eq(&self, other: &Self) -> bool {
        self == other
    }
}

/// Exact rational scalar. Closed under `+` and `*`; never overflows.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rat(pub BigRational);

impl Rat {
    pub fn from_int(n: i64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    /// Integer value when the denominator is one.
    pub fn as_integer(&self) -> Option<BigInt> {
        if self.0.denom().is_one() {
            Some(self.0.numer().clone())
        } else {
            None
        }
    }

    /// Parses `"num/den"` or a bare integer string.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFormat(format!("malformed rational `{s}`"));
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n, d),
            None => (s, "1"),
        };
        let num = BigInt::from_str(num.trim()).map_err(|_| bad())?;
        let den = BigInt::from_str(den.trim()).map_err(|_| bad())?;
        if den.is_zero() {
            return Err(bad());
        }
        Ok(Rat(BigRational::new(num, den)))
    }

    pub fn to_f64_lossy(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.denom().is_one() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl Scalar for Rat {
    const KIND: ScalarKind = ScalarKind::Rational;

    fn zero() -> Self {
        Rat(BigRational::zero())
    }

    fn one() -> Self {
        Rat(BigRational::one())
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    fn add(&self, other: &Self) -> Self {
        Rat(&self.0 + &other.0)
    }

    fn mul(&self, other: &Self) -> Self {
        Rat(&self.0 * &other.0)
    }

    fn from_u64(v: u64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(v)))
    }

    fn to_json(&self) -> Value {
        Value::String(self.to_string())
    }

    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::String(s) => Rat::parse(s),
            // Accept plain JSON integers as a convenience.
            Value::Number(n) if n.is_i64() => Ok(Rat::from_int(n.as_i64().unwrap())),
            other => Err(Error::InvalidFormat(format!(
                "expected rational string, got {other}"
            ))),
        }
    }
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::Float;

    fn zero() -> Self {
        0.0
    }

    fn one() -> Self {
        1.0
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }

    fn add(&self, other: &Self) -> Self {
        self + other
    }

    fn mul(&self, other: &Self) -> Self {
        self * other
    }

    fn from_u64(v: u64) -> Self {
        v as f64
    }

    fn to_json(&self) -> Value {
        serde_json::Number::from_f64(*self)
            .map(Value::Number)
            .unwrap_or(Value::Null)
    }

    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::Number(n) => {
                let x = n.as_f64().ok_or_else(|| {
                    Error::InvalidFormat(format!("non-finite float entry {n}"))
                })?;
                if !x.is_finite() {
                    return Err(Error::InvalidFormat(format!("non-finite float entry {x}")));
                }
                Ok(x)
            }
            other => Err(Error::InvalidFormat(format!(
                "expected float number, got {other}"
            ))),
        }
    }

    fn approx_eq(&self, other: &Self) -> bool {
        let scale = 1.0_f64.max(self.abs()).max(other.abs());
        (self - other).abs() <= 1e-9 * scale
    }
}

/// First `count` primes, ascending from 2.
pub fn first_primes(count: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(count);
    let mut candidate: u64 = 2;
    while primes.len() < count {
        if primes
            .iter()
            .take_while(|p| *p * *p <= candidate)
            .all(|p| candidate % p != 0)
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Exact factorial as a big integer.
pub fn factorial(n: u32) -> BigInt {
    let mut acc = BigInt::one();
    for k in 2..=n as u64 {
        acc *= BigInt::from(k);
    }
    acc
}

/// Sign-aware absolute value helper used by factorization.
pub fn bigint_abs(v: &BigInt) -> BigInt {
    v.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_parse_and_display() {
        assert_eq!(Rat::parse("3/4").unwrap(), Rat::ratio(3, 4));
        assert_eq!(Rat::parse("-7").unwrap(), Rat::from_int(-7));
        assert_eq!(Rat::ratio(6, 4).to_string(), "3/2");
        assert_eq!(Rat::from_int(5).to_string(), "5");
        assert!(Rat::parse("1/0").is_err());
        assert!(Rat::parse("x").is_err());
    }

    #[test]
    fn rational_arithmetic_is_exact() {
        let a = Rat::ratio(1, 3);
        let b = Rat::ratio(1, 6);
        assert_eq!(a.add(&b), Rat::ratio(1, 2));
        assert_eq!(a.mul(&b), Rat::ratio(1, 18));
    }

    #[test]
    fn primes_prefix() {
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
        assert_eq!(first_primes(0), Vec::<u64>::new());
    }

    #[test]
    fn factorial_small() {
        assert_eq!(factorial(0), BigInt::from(1));
        assert_eq!(factorial(5), BigInt::from(120));
    }
}
