//! Exact non-negative quantities used by the entity extractor and scenario solver.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Exact rational number. Displays as an integer, a terminating decimal, or
/// `n/d`, and parses all three forms back to the same value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(pub BigRational);

impl Rational {
    pub fn integer(n: i64) -> Self {
        Self(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn new(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "zero denominator");
        Self(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn one() -> Self {
        Self(BigRational::one())
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn pow(&self, exp: i32) -> Self {
        Self(self.0.pow(exp))
    }

    /// Parses an unsigned integer (`5`), decimal (`2.5`) or simple fraction
    /// (`1/2`). Anything else, including a zero denominator, is rejected.
    pub fn parse_token(tok: &str) -> Option<Self> {
        let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        if let Some((n, d)) = tok.split_once('/') {
            if !digits(n) || !digits(d) {
                return None;
            }
            let d: BigInt = d.parse().ok()?;
            if d.is_zero() {
                return None;
            }
            return Some(Self(BigRational::new(n.parse().ok()?, d)));
        }
        if let Some((int, frac)) = tok.split_once('.') {
            if !digits(int) || !digits(frac) {
                return None;
            }
            let numer: BigInt = format!("{int}{frac}").parse().ok()?;
            let denom = num_traits::pow(BigInt::from(10), frac.len());
            return Some(Self(BigRational::new(numer, denom)));
        }
        if digits(tok) {
            return Some(Self(BigRational::from_integer(tok.parse().ok()?)));
        }
        None
    }

    fn terminating_decimal(&self) -> Option<String> {
        let mut d = self.0.denom().clone();
        let mut places = 0usize;
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        let mut twos = 0usize;
        let mut fives = 0usize;
        while (&d % &two).is_zero() {
            d /= &two;
            twos += 1;
        }
        while (&d % &five).is_zero() {
            d /= &five;
            fives += 1;
        }
        if !d.is_one() {
            return None;
        }
        places += twos.max(fives);
        let scaled = &self.0 * BigRational::from_integer(num_traits::pow(BigInt::from(10), places));
        let digits = scaled.to_integer().abs().to_string();
        let digits = format!("{digits:0>width$}", width = places + 1);
        let (int, frac) = digits.split_at(digits.len() - places);
        let sign = if self.0.is_negative() { "-" } else { "" };
        Some(format!("{sign}{int}.{frac}"))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            return write!(f, "{}", self.0.numer());
        }
        match self.terminating_decimal() {
            Some(s) => f.write_str(&s),
            None => write!(f, "{}/{}", self.0.numer(), self.0.denom()),
        }
    }
}

impl FromStr for Rational {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let r = Self::parse_token(body).ok_or_else(|| format!("not a rational number: {s:?}"))?;
        Ok(if neg { Self(-r.0) } else { r })
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Int(i64),
        }
        match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::Int(n) => Ok(Rational::integer(n)),
        }
    }
}

impl std::ops::Mul for &Rational {
    type Output = Rational;
    fn mul(self, rhs: &Rational) -> Rational {
        Rational(&self.0 * &rhs.0)
    }
}

impl std::ops::Add for &Rational {
    type Output = Rational;
    fn add(self, rhs: &Rational) -> Rational {
        Rational(&self.0 + &rhs.0)
    }
}

impl std::ops::Div for &Rational {
    type Output = Rational;
    fn div(self, rhs: &Rational) -> Rational {
        Rational(&self.0 / &rhs.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_integer_decimal_fraction() {
        assert_eq!(Rational::parse_token("5"), Some(Rational::integer(5)));
        assert_eq!(Rational::parse_token("2.5"), Some(Rational::new(5, 2)));
        assert_eq!(Rational::parse_token("1/2"), Some(Rational::new(1, 2)));
        assert_eq!(Rational::parse_token("4/2"), Some(Rational::integer(2)));
        assert_eq!(Rational::parse_token("1/0"), None);
        assert_eq!(Rational::parse_token("1.2.3"), None);
        assert_eq!(Rational::parse_token("x"), None);
        assert_eq!(Rational::parse_token(""), None);
    }

    #[test]
    fn display_forms() {
        assert_eq!(Rational::integer(10).to_string(), "10");
        assert_eq!(Rational::new(5, 2).to_string(), "2.5");
        assert_eq!(Rational::new(1, 8).to_string(), "0.125");
        assert_eq!(Rational::new(2, 3).to_string(), "2/3");
        assert_eq!(Rational::new(-1, 4).to_string(), "-0.25");
    }

    proptest! {
        #[test]
        fn display_parses_back(n in -10_000i64..10_000, d in 1i64..2_000) {
            let r = Rational::new(n, d);
            prop_assert_eq!(r.to_string().parse::<Rational>().unwrap(), r.clone());
            let json = serde_json::to_string(&r).unwrap();
            prop_assert_eq!(serde_json::from_str::<Rational>(&json).unwrap(), r);
        }
    }
}
