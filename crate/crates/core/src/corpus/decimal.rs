use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const MAX_SCALE: u32 = 18;

/// Exact fixed-point decimal: `mantissa / 10^scale`.
///
/// Number mentions and arithmetic answers are kept in this form so sign search
/// never sees binary floating-point artifacts such as `0.1 + 0.2`.
#[derive(Clone, Copy, Debug)]
pub struct Decimal {
    mantissa: i128,
    scale: u32,
}

impl Decimal {
    pub const ZERO: Decimal = Decimal {
        mantissa: 0,
        scale: 0,
    };

    pub fn from_int(value: i64) -> Self {
        Decimal {
            mantissa: value as i128,
            scale: 0,
        }
    }

    pub fn new(mantissa: i128, scale: u32) -> Self {
        Decimal { mantissa, scale }.normalized()
    }

    /// Parses digits with optional comma grouping, an optional single decimal
    /// point and an optional leading minus sign. Commas are accepted anywhere
    /// between digits; the tokenizer is responsible for grouping shape.
    pub fn parse(text: &str) -> Option<Decimal> {
        let (negative, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text),
        };
        if body.is_empty() {
            return None;
        }
        let mut mantissa: i128 = 0;
        let mut scale = 0u32;
        let mut seen_point = false;
        let mut seen_digit = false;
        let mut prev_digit = false;
        for c in body.chars() {
            match c {
                '0'..='9' => {
                    mantissa = mantissa.checked_mul(10)?.checked_add((c as u8 - b'0') as i128)?;
                    if seen_point {
                        scale += 1;
                        if scale > MAX_SCALE {
                            return None;
                        }
                    }
                    seen_digit = true;
                    prev_digit = true;
                }
                ',' if !seen_point && prev_digit => prev_digit = false,
                '.' if !seen_point && prev_digit => {
                    seen_point = true;
                    prev_digit = false;
                }
                _ => return None,
            }
        }
        if !seen_digit || !prev_digit {
            return None;
        }
        if negative {
            mantissa = -mantissa;
        }
        Some(Decimal { mantissa, scale }.normalized())
    }

    pub fn normalized(self) -> Self {
        let mut d = self;
        while d.scale > 0 && d.mantissa % 10 == 0 {
            d.mantissa /= 10;
            d.scale -= 1;
        }
        if d.mantissa == 0 {
            d.scale = 0;
        }
        d
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn mantissa(&self) -> i128 {
        self.mantissa
    }

    /// Mantissa expressed at a larger (or equal) scale.
    pub fn at_scale(&self, scale: u32) -> Option<i128> {
        if scale < self.scale {
            return None;
        }
        let factor = 10i128.checked_pow(scale - self.scale)?;
        self.mantissa.checked_mul(factor)
    }

    pub fn is_integer(&self) -> bool {
        self.normalized().scale == 0
    }

    pub fn as_integer(&self) -> Option<i128> {
        let n = self.normalized();
        (n.scale == 0).then_some(n.mantissa)
    }

    pub fn to_f64(&self) -> f64 {
        self.mantissa as f64 / 10f64.powi(self.scale as i32)
    }

    pub fn checked_add(self, other: Decimal) -> Option<Decimal> {
        let scale = self.scale.max(other.scale);
        let sum = self.at_scale(scale)?.checked_add(other.at_scale(scale)?)?;
        Some(Decimal::new(sum, scale))
    }

    pub fn checked_neg(self) -> Option<Decimal> {
        Some(Decimal {
            mantissa: self.mantissa.checked_neg()?,
            scale: self.scale,
        })
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (self.normalized(), other.normalized());
        a.mantissa == b.mantissa && a.scale == b.scale
    }
}

impl Eq for Decimal {}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let scale = self.scale.max(other.scale);
        match (self.at_scale(scale), other.at_scale(scale)) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => self.to_f64().total_cmp(&other.to_f64()),
        }
    }
}

impl std::hash::Hash for Decimal {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        let n = self.normalized();
        n.mantissa.hash(state);
        n.scale.hash(state);
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.normalized();
        if n.scale == 0 {
            return write!(f, "{}", n.mantissa);
        }
        let sign = if n.mantissa < 0 { "-" } else { "" };
        let abs = n.mantissa.unsigned_abs();
        let factor = 10u128.pow(n.scale);
        write!(
            f,
            "{sign}{}.{:0width$}",
            abs / factor,
            abs % factor,
            width = n.scale as usize
        )
    }
}

impl FromStr for Decimal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Decimal::parse(s).ok_or_else(|| format!("not a decimal: {s:?}"))
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grouped_and_fractional() {
        assert_eq!(Decimal::parse("1,000"), Some(Decimal::from_int(1000)));
        assert_eq!(Decimal::parse("3.50").unwrap().to_string(), "3.5");
        assert_eq!(Decimal::parse("73.0").unwrap().to_string(), "73");
        assert_eq!(Decimal::parse("-2.25").unwrap().to_string(), "-2.25");
        assert_eq!(Decimal::parse("0.05").unwrap().to_string(), "0.05");
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "-", "1.", ".5", "1..2", "1,", "a1", "1.2.3", "1,.5"] {
            assert_eq!(Decimal::parse(bad), None, "{bad}");
        }
    }

    #[test]
    fn exact_addition() {
        let a = Decimal::parse("0.1").unwrap();
        let b = Decimal::parse("0.2").unwrap();
        assert_eq!(a.checked_add(b), Decimal::parse("0.3"));
    }

    #[test]
    fn ordering_across_scales() {
        assert!(Decimal::parse("2.5").unwrap() < Decimal::from_int(3));
        assert!(Decimal::parse("10").unwrap() > Decimal::parse("9.99").unwrap());
    }
}
