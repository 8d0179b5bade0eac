//! Arbitrary-precision reals and closed intervals.
//!
//! `BigReal` is a thin wrapper over an MPFR float. Every constructor takes an
//! explicit precision in bits; binary operations round to the larger of the
//! operand precisions.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rug::float::Round;
use rug::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Smallest precision any value is rounded to.
pub const MIN_BITS: u32 = 64;

/// Largest precision a construction may request before giving up.
pub const MAX_BITS: u32 = 1 << 22;

#[derive(Clone, PartialEq, PartialOrd)]
pub struct BigReal(Float);

impl BigReal {
    pub fn from_f64(value: f64, precision_bits: u32) -> Self {
        BigReal(Float::with_val(clamp_bits(precision_bits), value))
    }

    pub fn zero(precision_bits: u32) -> Self {
        Self::from_f64(0.0, precision_bits)
    }

    pub fn one(precision_bits: u32) -> Self {
        Self::from_f64(1.0, precision_bits)
    }

    /// Parses a decimal string, rounding to nearest at `precision_bits`.
    pub fn parse(text: &str, precision_bits: u32) -> Result<Self> {
        let parsed = Float::parse(text.trim())
            .map_err(|e| Error::Parse(format!("bad decimal {text:?}: {e}")))?;
        Ok(BigReal(Float::with_val(clamp_bits(precision_bits), parsed)))
    }

    /// Parses a decimal string at a precision matching its digit count.
    pub fn parse_auto(text: &str) -> Result<Self> {
        Self::parse(text, bits_for_decimal(text))
    }

    pub(crate) fn from_float(f: Float) -> Self {
        BigReal(f)
    }

    pub(crate) fn inner(&self) -> &Float {
        &self.0
    }

    pub fn precision_bits(&self) -> u32 {
        self.0.prec()
    }

    /// Same value rounded to nearest at a new precision.
    pub fn with_precision(&self, precision_bits: u32) -> Self {
        BigReal(Float::with_val(clamp_bits(precision_bits), &self.0))
    }

    /// Nearest double. Use [`BigReal::to_f64_checked`] when the loss matters.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }

    /// Nearest double together with a flag that is `true` when rounding lost
    /// information (including underflow to zero or subnormals).
    pub fn to_f64_checked(&self) -> (f64, bool) {
        let v = self.0.to_f64();
        let back = Float::with_val(self.0.prec().max(53), v);
        (v, back != self.0)
    }

    /// `log2 |x|`, finite even where `to_f64` underflows; `-inf` at zero.
    pub fn log2_abs(&self) -> f64 {
        if self.0.is_zero() {
            return f64::NEG_INFINITY;
        }
        let (m, e) = self.0.to_f64_exp();
        m.abs().log2() + e as f64
    }

    pub fn ln_abs(&self) -> f64 {
        self.log2_abs() * std::f64::consts::LN_2
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// -1, 0 or 1.
    pub fn signum(&self) -> i32 {
        match self.0.cmp0() {
            Some(Ordering::Less) => -1,
            Some(Ordering::Greater) => 1,
            _ => 0,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.signum() > 0
    }

    pub fn is_negative(&self) -> bool {
        self.signum() < 0
    }

    pub fn abs(&self) -> Self {
        BigReal(self.0.clone().abs())
    }

    pub fn mul_f64(&self, k: f64) -> Self {
        BigReal(Float::with_val(self.0.prec(), &self.0 * k))
    }

    pub fn add_f64(&self, k: f64) -> Self {
        BigReal(Float::with_val(self.0.prec(), &self.0 + k))
    }

    /// `self · e^{k}` at the precision of `self`.
    pub fn mul_exp(&self, k: f64) -> Self {
        let p = self.0.prec() + 16;
        let e = Float::with_val(p, k).exp();
        BigReal(Float::with_val(self.0.prec(), &self.0 * &e))
    }

    /// `base^{exponent}` rounded to `precision_bits`.
    pub fn powf(base: f64, exponent: f64, precision_bits: u32) -> Self {
        let p = clamp_bits(precision_bits);
        let b = Float::with_val(p + 32, base).ln();
        let e = Float::with_val(p + 32, b * exponent).exp();
        BigReal(Float::with_val(p, e))
    }

    pub fn min<'a>(&'a self, other: &'a Self) -> &'a Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max<'a>(&'a self, other: &'a Self) -> &'a Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Decimal expansion that [`BigReal::parse_auto`] reads back to the same
    /// value, at a precision at most 3 bits above the source.
    pub fn to_decimal(&self) -> String {
        let digits = (self.0.prec() as f64 * std::f64::consts::LOG10_2).ceil() as usize + GUARD_DIGITS;
        self.0.to_string_radix(10, Some(digits))
    }

    /// Short decimal for display.
    pub fn to_decimal_digits(&self, digits: usize) -> String {
        self.0.to_string_radix(10, Some(digits.max(1)))
    }

    pub fn midpoint(a: &Self, b: &Self) -> Self {
        let p = a.precision_bits().max(b.precision_bits()) + 1;
        let mut m = Float::with_val(p, &a.0 + &b.0);
        m >>= 1;
        BigReal(m)
    }

    pub fn sub_round(&self, other: &Self, precision_bits: u32) -> Self {
        BigReal(Float::with_val_round(clamp_bits(precision_bits), &self.0 - &other.0, Round::Nearest).0)
    }

    pub fn add_round(&self, other: &Self, precision_bits: u32) -> Self {
        BigReal(Float::with_val_round(clamp_bits(precision_bits), &self.0 + &other.0, Round::Nearest).0)
    }
}

const GUARD_DIGITS: usize = 3;

/// Largest precision whose [`BigReal::to_decimal`] output has as many digits
/// as `text`.
pub fn bits_for_decimal(text: &str) -> u32 {
    let mantissa = text.split(['e', 'E', '@']).next().unwrap_or("");
    let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
    let bits = (digits.saturating_sub(GUARD_DIGITS) as f64 * std::f64::consts::LOG2_10).floor() as u32;
    clamp_bits(bits)
}

pub(crate) fn clamp_bits(bits: u32) -> u32 {
    bits.clamp(MIN_BITS, MAX_BITS)
}

fn binary_prec(a: &BigReal, b: &BigReal) -> u32 {
    a.precision_bits().max(b.precision_bits())
}

impl Add for &BigReal {
    type Output = BigReal;
    fn add(self, rhs: &BigReal) -> BigReal {
        BigReal(Float::with_val(binary_prec(self, rhs), &self.0 + &rhs.0))
    }
}

impl Sub for &BigReal {
    type Output = BigReal;
    fn sub(self, rhs: &BigReal) -> BigReal {
        BigReal(Float::with_val(binary_prec(self, rhs), &self.0 - &rhs.0))
    }
}

impl Mul for &BigReal {
    type Output = BigReal;
    fn mul(self, rhs: &BigReal) -> BigReal {
        BigReal(Float::with_val(binary_prec(self, rhs), &self.0 * &rhs.0))
    }
}

impl Neg for &BigReal {
    type Output = BigReal;
    fn neg(self) -> BigReal {
        BigReal(Float::with_val(self.0.prec(), -&self.0))
    }
}

impl Neg for BigReal {
    type Output = BigReal;
    fn neg(self) -> BigReal {
        BigReal(-self.0)
    }
}

impl PartialEq<f64> for BigReal {
    fn eq(&self, other: &f64) -> bool {
        self.0 == *other
    }
}

impl PartialOrd<f64> for BigReal {
    fn partial_cmp(&self, other: &f64) -> Option<Ordering> {
        self.0.partial_cmp(other)
    }
}

impl fmt::Debug for BigReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}b]", self.to_decimal_digits(20), self.precision_bits())
    }
}

impl fmt::Display for BigReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f.precision() {
            Some(d) => f.write_str(&self.to_decimal_digits(d)),
            None => f.write_str(&self.to_decimal()),
        }
    }
}

impl Serialize for BigReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_decimal())
    }
}

impl<'de> Deserialize<'de> for BigReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        BigReal::parse_auto(&text).map_err(serde::de::Error::custom)
    }
}

/// Closed interval `[lo, hi]` with `lo < hi`, both in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigInterval {
    lo: BigReal,
    hi: BigReal,
}

impl BigInterval {
    pub fn new(lo: BigReal, hi: BigReal) -> Result<Self> {
        if lo >= hi {
            return Err(Error::Degenerate(format!("[{lo:?}, {hi:?}]")));
        }
        if lo < -1.0 || hi > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "interval [{}, {}] leaves [-1, 1]",
                lo.to_f64(),
                hi.to_f64()
            )));
        }
        Ok(BigInterval { lo, hi })
    }

    pub fn from_f64(lo: f64, hi: f64, precision_bits: u32) -> Result<Self> {
        Self::new(
            BigReal::from_f64(lo, precision_bits),
            BigReal::from_f64(hi, precision_bits),
        )
    }

    /// `[center - radius, center + radius] ∩ [-1, 1]`.
    pub fn ball(center: &BigReal, radius: &BigReal) -> Result<Self> {
        let p = center.precision_bits().max(radius.precision_bits());
        let one = BigReal::one(p);
        let lo = center.sub_round(radius, p);
        let hi = center.add_round(radius, p);
        Self::new(lo.max(&-&one).clone(), hi.min(&one).clone())
    }

    pub fn lo(&self) -> &BigReal {
        &self.lo
    }

    pub fn hi(&self) -> &BigReal {
        &self.hi
    }

    pub fn width(&self) -> BigReal {
        let p = self.lo.precision_bits().max(self.hi.precision_bits());
        self.hi.sub_round(&self.lo, p)
    }

    pub fn log2_width(&self) -> f64 {
        self.width().log2_abs()
    }

    pub fn mid(&self) -> BigReal {
        BigReal::midpoint(&self.lo, &self.hi)
    }

    pub fn precision_bits(&self) -> u32 {
        self.lo.precision_bits().max(self.hi.precision_bits())
    }

    pub fn contains(&self, x: &BigReal) -> bool {
        &self.lo <= x && x <= &self.hi
    }

    pub fn contains_interior(&self, x: &BigReal) -> bool {
        &self.lo < x && x < &self.hi
    }

    pub fn contains_interval(&self, other: &BigInterval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Strictly positive or strictly negative interval: `Some(sign)`.
    pub fn sign(&self) -> Option<i32> {
        if self.lo.is_positive() {
            Some(1)
        } else if self.hi.is_negative() {
            Some(-1)
        } else {
            None
        }
    }

    pub fn contains_zero_interior(&self) -> bool {
        self.lo.is_negative() && self.hi.is_positive()
    }

    pub fn negate(&self) -> Self {
        BigInterval {
            lo: -&self.hi,
            hi: -&self.lo,
        }
    }

    pub fn intersect(&self, other: &BigInterval) -> Result<Self> {
        Self::new(
            self.lo.max(&other.lo).clone(),
            self.hi.min(&other.hi).clone(),
        )
    }

    /// Affine shrink about `center` by `2^{-k}` on both sides.
    pub fn shrink_about(&self, center: &BigReal, k: u32) -> Result<Self> {
        let p = self.precision_bits();
        let scale = |e: &BigReal| {
            let d = e.sub_round(center, p);
            let mut f = d.inner().clone();
            f >>= k;
            center.add_round(&BigReal::from_float(f), p)
        };
        Self::new(scale(&self.lo), scale(&self.hi))
    }

    /// Point at fraction `t` of the way from `lo` to `hi`.
    pub fn lerp(&self, t: f64) -> BigReal {
        let p = self.precision_bits() + 8;
        let w = self.width().with_precision(p).mul_f64(t);
        self.lo.with_precision(p).add_round(&w, p)
    }

    pub fn to_f64_pair(&self) -> (f64, f64) {
        (self.lo.to_f64(), self.hi.to_f64())
    }
}

impl fmt::Display for BigInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = f.precision().unwrap_or(12);
        write!(
            f,
            "[{}, {}]",
            self.lo.to_decimal_digits(d),
            self.hi.to_decimal_digits(d)
        )
    }
}
