//! Signed real numbers stored as `sign * exp(logmag)`.
//!
//! Amplitudes of the amplified states span hundreds of decades at large gain
//! (`Γ^i` with `i ~ 10^4`), so they are carried in log form and only brought
//! back to linear scale relative to a common reference.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Div, Mul, Neg};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Negative => -1.0,
            Sign::Zero => 0.0,
            Sign::Positive => 1.0,
        }
    }

    fn product(self, other: Sign) -> Sign {
        match (self, other) {
            (Sign::Zero, _) | (_, Sign::Zero) => Sign::Zero,
            (a, b) if a == b => Sign::Positive,
            _ => Sign::Negative,
        }
    }

    fn flip(self) -> Sign {
        match self {
            Sign::Negative => Sign::Positive,
            Sign::Zero => Sign::Zero,
            Sign::Positive => Sign::Negative,
        }
    }
}

/// A signed magnitude held logarithmically. `logmag` is ignored when the sign is zero.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LogScalar {
    pub sign: Sign,
    pub logmag: f64,
}

impl LogScalar {
    pub const ZERO: LogScalar = LogScalar { sign: Sign::Zero, logmag: f64::NEG_INFINITY };
    pub const ONE: LogScalar = LogScalar { sign: Sign::Positive, logmag: 0.0 };

    /// Positive value `exp(logmag)`.
    pub fn from_ln(logmag: f64) -> Self {
        if logmag == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        LogScalar { sign: Sign::Positive, logmag }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else if x > 0.0 {
            LogScalar { sign: Sign::Positive, logmag: x.ln() }
        } else {
            LogScalar { sign: Sign::Negative, logmag: (-x).ln() }
        }
    }

    /// Linear value; underflows to zero and overflows to infinity like `exp`.
    pub fn to_f64(self) -> f64 {
        match self.sign {
            Sign::Zero => 0.0,
            s => s.as_f64() * self.logmag.exp(),
        }
    }

    /// Linear value of `self / exp(reference)`.
    pub fn scaled(self, reference: f64) -> f64 {
        match self.sign {
            Sign::Zero => 0.0,
            s => s.as_f64() * (self.logmag - reference).exp(),
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == Sign::Zero
    }

    pub fn abs(self) -> Self {
        match self.sign {
            Sign::Zero => Self::ZERO,
            _ => LogScalar { sign: Sign::Positive, logmag: self.logmag },
        }
    }

    /// Natural log of the magnitude (`-inf` for zero).
    pub fn ln_abs(self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.logmag
        }
    }

    pub fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::ONE;
        }
        match self.sign {
            Sign::Zero => Self::ZERO,
            s => {
                let sign = if s == Sign::Negative && n % 2 != 0 { Sign::Negative } else { Sign::Positive };
                LogScalar { sign, logmag: self.logmag * n as f64 }
            }
        }
    }

    /// Square root of a non-negative value.
    pub fn sqrt(self) -> Self {
        match self.sign {
            Sign::Zero => Self::ZERO,
            Sign::Positive => LogScalar { sign: Sign::Positive, logmag: 0.5 * self.logmag },
            Sign::Negative => LogScalar { sign: Sign::Positive, logmag: f64::NAN },
        }
    }

    /// `|self|^2` as a positive log value.
    pub fn norm_sqr(self) -> Self {
        match self.sign {
            Sign::Zero => Self::ZERO,
            _ => LogScalar { sign: Sign::Positive, logmag: 2.0 * self.logmag },
        }
    }

    /// Signed sum computed in the log domain.
    ///
    /// Opposite-sign operands of nearly equal magnitude lose relative accuracy
    /// in proportion to the cancellation; long mixed-sign sums should go through
    /// [`Accumulator`](super::Accumulator) instead.
    pub fn add(self, other: Self) -> Self {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        let (big, small) = if self.logmag >= other.logmag { (self, other) } else { (other, self) };
        let d = small.logmag - big.logmag;
        if big.sign == small.sign {
            LogScalar { sign: big.sign, logmag: big.logmag + d.exp().ln_1p() }
        } else {
            if d == 0.0 {
                return Self::ZERO;
            }
            LogScalar { sign: big.sign, logmag: big.logmag + (-d.exp()).ln_1p() }
        }
    }

    pub fn sub(self, other: Self) -> Self {
        self.add(-other)
    }

    /// Compare magnitudes.
    pub fn cmp_abs(&self, other: &Self) -> Ordering {
        self.ln_abs().partial_cmp(&other.ln_abs()).unwrap_or(Ordering::Equal)
    }
}

impl Default for LogScalar {
    fn default() -> Self {
        Self::ZERO
    }
}

impl PartialEq for LogScalar {
    fn eq(&self, other: &Self) -> bool {
        self.sign == other.sign && (self.sign == Sign::Zero || self.logmag == other.logmag)
    }
}

impl Mul for LogScalar {
    type Output = LogScalar;

    fn mul(self, rhs: LogScalar) -> LogScalar {
        match self.sign.product(rhs.sign) {
            Sign::Zero => LogScalar::ZERO,
            sign => LogScalar { sign, logmag: self.logmag + rhs.logmag },
        }
    }
}

impl Div for LogScalar {
    type Output = LogScalar;

    fn div(self, rhs: LogScalar) -> LogScalar {
        assert!(!rhs.is_zero(), "LogScalar division by zero");
        match self.sign.product(rhs.sign) {
            Sign::Zero => LogScalar::ZERO,
            sign => LogScalar { sign, logmag: self.logmag - rhs.logmag },
        }
    }
}

impl Neg for LogScalar {
    type Output = LogScalar;

    fn neg(self) -> LogScalar {
        LogScalar { sign: self.sign.flip(), logmag: self.logmag }
    }
}

impl From<f64> for LogScalar {
    fn from(x: f64) -> Self {
        LogScalar::from_f64(x)
    }
}

impl fmt::Display for LogScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sign {
            Sign::Zero => write!(f, "0"),
            s => {
                let decades = self.logmag / std::f64::consts::LN_10;
                let exponent = decades.floor();
                let mantissa = 10f64.powf(decades - exponent) * s.as_f64();
                write!(f, "{mantissa:.12}e{exponent}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_absorbs_and_is_identity() {
        let x = LogScalar::from_f64(-3.5);
        assert!((x * LogScalar::ZERO).is_zero());
        assert!((LogScalar::ZERO * x).is_zero());
        assert_eq!(x.add(LogScalar::ZERO), x);
        assert_eq!(LogScalar::ZERO.add(x), x);
    }

    #[test]
    fn exact_cancellation_gives_zero() {
        let x = LogScalar::from_f64(2.25);
        assert!(x.add(-x).is_zero());
    }

    #[test]
    fn huge_magnitudes_stay_finite() {
        let x = LogScalar::from_ln(5.0e4);
        let y = x * x;
        assert_eq!(y.logmag, 1.0e5);
        assert_eq!((y / x).logmag, 5.0e4);
        assert!(x.to_f64().is_infinite());
        assert!((x.scaled(5.0e4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn powi_tracks_sign() {
        let x = LogScalar::from_f64(-0.5);
        assert!((x.powi(3).to_f64() + 0.125).abs() < 1e-16);
        assert!((x.powi(2).to_f64() - 0.25).abs() < 1e-16);
        assert_eq!(x.powi(0), LogScalar::ONE);
    }

    #[test]
    fn display_is_scientific() {
        assert_eq!(format!("{}", LogScalar::from_f64(-1234.5)), "-1.234500000000e3");
        assert_eq!(format!("{}", LogScalar::ZERO), "0");
    }

    proptest! {
        #[test]
        fn round_trip_twelve_digits(x in 1e-300f64..1e300) {
            let back = LogScalar::from_f64(x).to_f64();
            prop_assert!(((back - x) / x).abs() < 1e-12);
        }

        #[test]
        fn signed_addition_matches_linear(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let s = LogScalar::from_f64(a).add(LogScalar::from_f64(b)).to_f64();
            let scale = a.abs().max(b.abs()).max(1e-300);
            prop_assert!((s - (a + b)).abs() <= 1e-12 * scale);
        }

        #[test]
        fn multiplication_matches_linear(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let p = (LogScalar::from_f64(a) * LogScalar::from_f64(b)).to_f64();
            prop_assert!((p - a * b).abs() <= 1e-12 * (a * b).abs().max(1e-300));
        }
    }
}
