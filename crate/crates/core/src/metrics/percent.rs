use std::fmt;
use std::ops::{Add, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// An exact percentage. Aggregation stays exact; rounding happens only when
/// a value is formatted or explicitly rounded.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(BigRational);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a decimal number: {0:?}")]
pub struct ParsePercentError(pub String);

fn pow10(decimals: u32) -> BigInt {
    num_traits::pow(BigInt::from(10), decimals as usize)
}

impl Percent {
    pub fn zero() -> Self {
        Self(BigRational::zero())
    }

    pub fn from_integer(v: i64) -> Self {
        Self(BigRational::from_integer(v.into()))
    }

    /// `100 * hits / total`. Panics when `total` is zero.
    pub fn of(hits: u64, total: u64) -> Self {
        assert!(total > 0, "percentage of an empty set");
        Self(BigRational::new(BigInt::from(hits) * 100, BigInt::from(total)))
    }

    pub fn from_rational(r: BigRational) -> Self {
        Self(r)
    }

    /// Parses a plain decimal literal such as `46.30` or `-1.5` exactly.
    pub fn from_decimal(text: &str) -> Result<Self, ParsePercentError> {
        let err = || ParsePercentError(text.to_string());
        let t = text.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let joined = format!("{int_part}{frac_part}");
        let mut numer: BigInt = joined.parse().map_err(|_| err())?;
        if neg {
            numer = -numer;
        }
        Ok(Self(BigRational::new(numer, pow10(frac_part.len() as u32))))
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn abs(&self) -> Self {
        Self(self.0.abs())
    }

    pub fn scale(&self, factor: &BigRational) -> Self {
        Self(&self.0 * factor)
    }

    pub fn mean<'a>(values: impl IntoIterator<Item = &'a Percent>) -> Option<Self> {
        let mut sum = BigRational::zero();
        let mut n = 0u64;
        for v in values {
            sum += &v.0;
            n += 1;
        }
        (n > 0).then(|| Self(sum / BigRational::from_integer(n.into())))
    }

    /// Rounds half away from zero to `decimals` places.
    pub fn round_half_up(&self, decimals: u32) -> Self {
        let scale = pow10(decimals);
        let scaled = &self.0 * BigRational::from_integer(scale.clone());
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let magnitude = (scaled.abs() + half).floor().to_integer();
        let units = if scaled.is_negative() { -magnitude } else { magnitude };
        Self(BigRational::new(units, scale))
    }

    /// Fixed-point rendering after half-up rounding, e.g. `53.11` or `-1.0`.
    pub fn format(&self, decimals: u32) -> String {
        let rounded = self.round_half_up(decimals);
        let scale = pow10(decimals);
        let units = (rounded.0 * BigRational::from_integer(scale.clone())).to_integer();
        let sign = if units.is_negative() { "-" } else { "" };
        let (whole, frac) = units.abs().div_rem(&scale);
        if decimals == 0 {
            format!("{sign}{whole}")
        } else {
            format!("{sign}{whole}.{:0>width$}", frac.to_string(), width = decimals as usize)
        }
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }
}

impl Add for &Percent {
    type Output = Percent;
    fn add(self, rhs: &Percent) -> Percent {
        Percent(&self.0 + &rhs.0)
    }
}

impl Sub for &Percent {
    type Output = Percent;
    fn sub(self, rhs: &Percent) -> Percent {
        Percent(&self.0 - &rhs.0)
    }
}

impl fmt::Debug for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Percent({} = {})", self.0, self.format(6))
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format(2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Percent {
        Percent::from_decimal(s).unwrap()
    }

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(p("46.30"), p("46.3"));
        assert_eq!(p("0.1").as_rational(), &BigRational::new(1.into(), 10.into()));
        assert_eq!(p("-1.50").format(2), "-1.50");
        assert_eq!(p(".5").format(1), "0.5");
        assert!(Percent::from_decimal("4e2").is_err());
        assert!(Percent::from_decimal("").is_err());
        assert!(Percent::from_decimal("-").is_err());
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(p("57.305").format(2), "57.31");
        assert_eq!(p("5.15").format(1), "5.2");
        assert_eq!(p("5.149999").format(1), "5.1");
        assert_eq!(p("-1.05").format(1), "-1.1");
        assert_eq!(p("2.03").format(1), "2.0");
        assert_eq!(p("0").format(2), "0.00");
        assert_eq!(p("100").format(2), "100.00");
    }

    #[test]
    fn ratio() {
        assert_eq!(Percent::of(7, 10), p("70"));
        assert_eq!(Percent::of(1, 3).format(2), "33.33");
        assert_eq!(Percent::of(2, 3).format(2), "66.67");
    }

    #[test]
    fn mean_of_values() {
        let vals = [p("55.10"), p("53.08")];
        assert_eq!(Percent::mean(&vals).unwrap(), p("54.09"));
        assert!(Percent::mean(&[]).is_none());
    }
}
