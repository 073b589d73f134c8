//! Scalar abstraction for benchmark metrics.
//!
//! Scoring is written once against [`Score`] and instantiated both with `f64`
//! (reports, JSON export) and with exact rationals (arithmetic oracles where
//! rounding must not leak into comparisons).

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A metric value: closed under field arithmetic and convertible to `f64` for display.
pub trait Score:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// `numer / denom` in this scalar. `denom` must be nonzero.
    fn ratio(numer: usize, denom: usize) -> Self {
        Self::from_usize(numer).expect("numerator representable")
            / Self::from_usize(denom).expect("denominator representable")
    }

    /// Lossy view used for rendering.
    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Score for f32 {}
impl Score for f64 {}
impl Score for Ratio<i64> {}

/// Exact metric scalar.
pub type Exact = Ratio<i64>;

/// Parse a decimal literal such as `"0.75"` or `"62.5"` into an exact rational.
pub fn exact_decimal(text: &str) -> Option<Exact> {
    let text = text.trim();
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let scale = 10i64.checked_pow(frac_part.len() as u32)?;
    let whole: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    let numer = whole.checked_mul(scale)?.checked_add(frac)?;
    let value = Ratio::new(numer, scale);
    Some(if negative { -value } else { value })
}
