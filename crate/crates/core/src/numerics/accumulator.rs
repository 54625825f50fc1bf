//! Compensated summation of log-domain terms.
//!
//! Terms are rescaled against a running reference (the largest magnitude seen)
//! and folded into a Neumaier sum. An exact fixed-point superaccumulator runs
//! alongside it unless disabled; when the ratio of absolute mass to the final
//! sum exceeds [`CANCELLATION_LIMIT`] the exact value is returned instead.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use super::logscalar::{LogScalar, Sign};

/// Cancellation ratio above which the exact accumulator takes over.
pub const CANCELLATION_LIMIT: f64 = 1e8;

/// Default width of the exact window below the leading term, in bits.
pub const DEFAULT_PRECISION_BITS: u32 = 160;

#[derive(Clone, Debug)]
struct Exact {
    bits: u32,
    /// Value is `acc * 2^lo`.
    acc: BigInt,
    lo: i64,
    top: i64,
}

impl Exact {
    fn new(bits: u32) -> Self {
        Exact { bits, acc: BigInt::zero(), lo: i64::MIN, top: i64::MIN }
    }

    fn add_term(&mut self, t: LogScalar) {
        if t.is_zero() || !t.logmag.is_finite() {
            return;
        }
        // t = mant * 2^e with mant in [1, 2)
        let e = (t.logmag / std::f64::consts::LN_2).floor() as i64;
        let mant = (t.logmag - e as f64 * std::f64::consts::LN_2).exp();
        // 53-bit integer mantissa: t = q * 2^(e - 52)
        let q = (mant * (1u64 << 52) as f64).round() as i64;
        let q = if t.sign == Sign::Negative { -q } else { q };
        self.add_fixed(BigInt::from(q), e - 52, e);
    }

    fn add_fixed(&mut self, q: BigInt, exp: i64, top: i64) {
        if top > self.top {
            self.top = top;
        }
        let floor = self.top - self.bits as i64 - 64;
        if self.lo == i64::MIN {
            self.lo = floor;
        }
        if floor > self.lo {
            // drop bits that fell out of the window
            let shift = (floor - self.lo) as usize;
            self.acc >>= shift;
            self.lo = floor;
        }
        if exp >= self.lo {
            self.acc += q << ((exp - self.lo) as usize);
        } else {
            let shift = (self.lo - exp) as usize;
            if shift < 4096 {
                self.acc += q >> shift;
            }
        }
    }

    fn merge(&mut self, other: &Exact) {
        if other.lo == i64::MIN {
            return;
        }
        self.add_fixed(other.acc.clone(), other.lo, other.top);
    }

    fn value(&self) -> LogScalar {
        if self.acc.is_zero() {
            return LogScalar::ZERO;
        }
        let bits = self.acc.bits() as i64;
        let shift = (bits - 64).max(0);
        let head = (self.acc.abs() >> shift as usize).to_f64().unwrap_or(0.0);
        let e2 = shift + self.lo;
        let sign = if self.acc.is_negative() { Sign::Negative } else { Sign::Positive };
        if (-1000..=960).contains(&e2) {
            let v = head * 2f64.powi(e2 as i32);
            if v.is_normal() {
                return LogScalar::from_f64(if sign == Sign::Negative { -v } else { v });
            }
        }
        LogScalar { sign, logmag: head.ln() + e2 as f64 * std::f64::consts::LN_2 }
    }
}

/// Running compensated sum over [`LogScalar`] terms.
///
/// Results depend only on the sequence of terms; feeding the same terms in the
/// same order always yields bit-identical output.
#[derive(Clone, Debug)]
pub struct Accumulator {
    reference: f64,
    sum: f64,
    comp: f64,
    abs_sum: f64,
    count: u64,
    exact: Option<Exact>,
}

impl Default for Accumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl Accumulator {
    /// Compensated sum with the exact fallback at [`DEFAULT_PRECISION_BITS`].
    pub fn new() -> Self {
        Self::with_precision(DEFAULT_PRECISION_BITS)
    }

    pub fn with_precision(bits: u32) -> Self {
        Accumulator {
            reference: f64::NEG_INFINITY,
            sum: 0.0,
            comp: 0.0,
            abs_sum: 0.0,
            count: 0,
            exact: Some(Exact::new(bits.max(64))),
        }
    }

    /// Neumaier summation only.
    pub fn fast() -> Self {
        Accumulator { exact: None, ..Self::with_precision(64) }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    fn rescale_to(&mut self, reference: f64) {
        if self.reference != f64::NEG_INFINITY {
            let f = (self.reference - reference).exp();
            self.sum *= f;
            self.comp *= f;
            self.abs_sum *= f;
        }
        self.reference = reference;
    }

    fn push_scaled(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.abs_sum += x.abs();
    }

    pub fn add(&mut self, term: LogScalar) {
        self.count += 1;
        if term.is_zero() {
            return;
        }
        if term.logmag > self.reference {
            self.rescale_to(term.logmag);
        }
        self.push_scaled(term.scaled(self.reference));
        if let Some(ex) = self.exact.as_mut() {
            ex.add_term(term);
        }
    }

    pub fn add_f64(&mut self, x: f64) {
        self.add(LogScalar::from_f64(x));
    }

    /// Fold another accumulator in, as if its terms had followed ours.
    pub fn merge(&mut self, other: &Accumulator) {
        self.count += other.count;
        if other.reference == f64::NEG_INFINITY {
            return;
        }
        if other.reference > self.reference {
            self.rescale_to(other.reference);
        }
        let f = (other.reference - self.reference).exp();
        let abs_before = self.abs_sum;
        self.push_scaled(other.sum * f);
        self.push_scaled(other.comp * f);
        self.abs_sum = abs_before + other.abs_sum * f;
        match (self.exact.as_mut(), other.exact.as_ref()) {
            (Some(a), Some(b)) => a.merge(b),
            _ => self.exact = None,
        }
    }

    /// Ratio of summed magnitudes to the magnitude of the result.
    pub fn cancellation(&self) -> f64 {
        let s = (self.sum + self.comp).abs();
        if self.abs_sum == 0.0 {
            1.0
        } else {
            self.abs_sum / s
        }
    }

    pub fn value(&self) -> LogScalar {
        if let Some(ex) = self.exact.as_ref() {
            if self.cancellation() > CANCELLATION_LIMIT {
                return ex.value();
            }
        }
        let s = self.sum + self.comp;
        if s == 0.0 {
            return LogScalar::ZERO;
        }
        let mut v = LogScalar::from_f64(s);
        v.logmag += self.reference;
        v
    }

    pub fn value_f64(&self) -> f64 {
        self.value().to_f64()
    }
}

/// Ordered parallel sum: fixed-size chunks are summed independently and the
/// partial accumulators are merged left to right, so the result does not
/// depend on the number of worker threads.
pub fn ordered_sum(terms: &[LogScalar], chunk: usize) -> LogScalar {
    let chunk = chunk.max(1);
    let parts: Vec<Accumulator> = terms
        .par_chunks(chunk)
        .map(|c| {
            let mut a = Accumulator::new();
            for &t in c {
                a.add(t);
            }
            a
        })
        .collect();
    let mut total = Accumulator::new();
    for p in &parts {
        total.merge(p);
    }
    total.value()
}

/// Ordered parallel sum of plain floats.
pub fn ordered_sum_f64(terms: &[f64], chunk: usize) -> f64 {
    let chunk = chunk.max(1);
    let parts: Vec<Accumulator> = terms
        .par_chunks(chunk)
        .map(|c| {
            let mut a = Accumulator::fast();
            for &t in c {
                a.add_f64(t);
            }
            a
        })
        .collect();
    let mut total = Accumulator::fast();
    for p in &parts {
        total.merge(p);
    }
    total.value_f64()
}
