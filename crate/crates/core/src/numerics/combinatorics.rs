//! Factorials, binomial coefficients, beamsplitter amplitudes and binomial pmf windows.

use crate::error::{domain, Result};

use super::logscalar::LogScalar;

const SMALL: usize = 20;

fn small_ln_factorials() -> &'static [f64; SMALL] {
    static TABLE: std::sync::OnceLock<[f64; SMALL]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; SMALL];
        let mut f: u64 = 1;
        for (n, slot) in t.iter_mut().enumerate() {
            if n > 0 {
                f *= n as u64;
            }
            *slot = (f as f64).ln();
        }
        t
    })
}

/// `ln(n!)` as a plain float.
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < SMALL {
        return small_ln_factorials()[n as usize];
    }
    let x = n as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Stirling series; truncation error below 1e-17 for n >= 20
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    x * x.ln() - x + 0.5 * (std::f64::consts::TAU * x).ln() + series
}

/// `n!` as a log-domain value.
pub fn log_factorial(n: u64) -> LogScalar {
    LogScalar::from_ln(ln_factorial(n))
}

/// `ln C(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Difference between `ln(n!)` and its leading Stirling terms.
fn stirling_error(n: u64) -> f64 {
    let x = n as f64;
    if (n as usize) < SMALL {
        if n == 0 {
            return 0.0;
        }
        return small_ln_factorials()[n as usize] - ((x + 0.5) * x.ln() - x + 0.5 * std::f64::consts::TAU.ln());
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// `x ln(x/m) + m - x`, accurate when `x` is close to `m`.
fn deviance(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..200 {
            ej *= v2;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                break;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// `ln` of the binomial pmf `C(n,k) p^k (1-p)^(n-k)`.
///
/// Uses the saddle-point form (Stirling remainders plus deviance terms),
/// which keeps full relative accuracy for large `n` where differences of
/// log-factorials would lose about `log10(ln n!)` digits.
pub fn ln_binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    if k == 0 {
        return n as f64 * (-p).ln_1p();
    }
    if k == n {
        return n as f64 * p.ln();
    }
    let (nf, kf) = (n as f64, k as f64);
    let lc = stirling_error(n) - stirling_error(k) - stirling_error(n - k)
        - deviance(kf, nf * p)
        - deviance(nf - kf, nf * q);
    lc + 0.5 * (nf / (std::f64::consts::TAU * kf * (nf - kf))).ln()
}

/// Beamsplitter amplitude `c_k^(N) = sqrt(C(N,k) R^k (1-R)^(N-k))` for `k` reflected photons.
pub fn bs_amplitude(k: u64, n: u64, r: f64) -> Result<LogScalar> {
    if k > n {
        return domain(format!("reflected count {k} exceeds input count {n}"));
    }
    if !(0.0..=1.0).contains(&r) {
        return domain(format!("reflectivity {r} outside [0, 1]"));
    }
    Ok(LogScalar::from_ln(0.5 * ln_binomial_pmf(k, n, r)))
}

/// Binomial pmf values `P(k; n, p)` for `k` in `[lo, hi]` (clipped to `[0, n]`).
///
/// Seeded in log space at the mode (or the nearest window end) and extended by
/// the ratio recurrence in both directions; values below the f64 range come
/// out as zero.
#[derive(Clone, Debug)]
pub struct PmfWindow {
    pub lo: u64,
    pub values: Vec<f64>,
}

impl PmfWindow {
    pub fn get(&self, k: u64) -> f64 {
        if k < self.lo {
            return 0.0;
        }
        self.values.get((k - self.lo) as usize).copied().unwrap_or(0.0)
    }

    pub fn hi(&self) -> u64 {
        self.lo + self.values.len() as u64 - 1
    }
}

pub fn binomial_pmf_window(n: u64, p: f64, lo: u64, hi: u64) -> PmfWindow {
    let hi = hi.min(n);
    if lo > hi {
        return PmfWindow { lo, values: Vec::new() };
    }
    let len = (hi - lo + 1) as usize;
    let mut values = vec![0.0; len];
    if p == 0.0 || p == 1.0 {
        let k = if p == 0.0 { 0 } else { n };
        if (lo..=hi).contains(&k) {
            values[(k - lo) as usize] = 1.0;
        }
        return PmfWindow { lo, values };
    }
    let mode = (((n + 1) as f64) * p).floor() as u64;
    let seed = mode.clamp(lo, hi);
    let s = (seed - lo) as usize;
    values[s] = ln_binomial_pmf(seed, n, p).exp();
    let odds = p / (1.0 - p);
    // upward: P(k+1)/P(k) = (n-k)/(k+1) * odds
    for idx in s + 1..len {
        let k = lo + idx as u64 - 1;
        values[idx] = values[idx - 1] * ((n - k) as f64 / (k + 1) as f64) * odds;
    }
    // downward: P(k-1)/P(k) = k/(n-k+1) / odds
    for idx in (0..s).rev() {
        let k = lo + idx as u64 + 1;
        values[idx] = values[idx + 1] * (k as f64 / (n - k + 1) as f64) / odds;
    }
    PmfWindow { lo, values }
}

/// Window `[lo, hi]` outside which the binomial mass is below `eps`, from a
/// Chernoff-style bound padded generously.
pub fn binomial_support(n: u64, p: f64, eps: f64) -> (u64, u64) {
    if p <= 0.0 {
        return (0, 0);
    }
    if p >= 1.0 {
        return (n, n);
    }
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    let z = (2.0 * (1.0 / eps).ln()).sqrt() + 1.0;
    let w = z * sd + z * z + 2.0;
    let lo = (mean - w).floor().max(0.0) as u64;
    let hi = ((mean + w).ceil() as u64).min(n);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use num_traits::{One, ToPrimitive};
    use proptest::prelude::*;

    fn exact_ln_factorial(n: u64) -> f64 {
        let mut f = BigUint::one();
        for k in 2..=n {
            f *= k;
        }
        let bits = f.bits();
        let shift = bits.saturating_sub(60);
        let head = (&f >> shift).to_f64().unwrap();
        head.ln() + shift as f64 * std::f64::consts::LN_2
    }

    #[test]
    fn small_factorials() {
        assert_eq!(log_factorial(0).logmag, 0.0);
        assert!((log_factorial(5).to_f64() - 120.0).abs() < 1e-12);
    }

    #[test]
    fn factorial_ten_thousand_matches_bigint() {
        let exact = exact_ln_factorial(10_000);
        let got = ln_factorial(10_000);
        assert!(((got - exact) / exact).abs() < 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn factorial_near_table_edge() {
        for n in [19u64, 20, 21, 25, 40, 170] {
            let exact = exact_ln_factorial(n);
            assert!(((ln_factorial(n) - exact) / exact).abs() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn bs_examples() {
        let a = bs_amplitude(0, 1, 0.1).unwrap().to_f64();
        assert!((a - 0.9f64.sqrt()).abs() < 1e-15);
        assert!(bs_amplitude(3, 3, 0.0).unwrap().is_zero());
        let b = bs_amplitude(2, 3, 0.1).unwrap().to_f64();
        assert!((b - 0.027f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bs_path_enumeration() {
        // sum over the 2^3 reflect/transmit paths with exactly two reflections
        let r: f64 = 0.1;
        let mut total = 0.0;
        for mask in 0u32..8 {
            if mask.count_ones() == 2 {
                total += r * r * (1.0 - r);
            }
        }
        assert!((bs_amplitude(2, 3, r).unwrap().to_f64().powi(2) - total).abs() < 1e-15);
    }

    #[test]
    fn bs_domain_errors() {
        assert!(bs_amplitude(4, 3, 0.1).is_err());
        assert!(bs_amplitude(1, 3, 1.5).is_err());
        assert!(bs_amplitude(1, 3, -0.1).is_err());
    }

    #[test]
    fn bs_completeness_up_to_thousand() {
        for &r in &[0.05, 0.1, 0.2] {
            for n in [0u64, 1, 2, 7, 50, 333, 1000] {
                let s: f64 = (0..=n).map(|k| bs_amplitude(k, n, r).unwrap().to_f64().powi(2)).sum();
                assert!((s - 1.0).abs() < 1e-10, "n={n} r={r} s={s}");
            }
        }
    }

    #[test]
    fn pmf_window_matches_direct() {
        let w = binomial_pmf_window(4000, 0.1, 300, 500);
        for k in (300..=500).step_by(17) {
            let direct = ln_binomial_pmf(k, 4000, 0.1).exp();
            assert!((w.get(k) - direct).abs() <= 1e-10 * direct.max(1e-300), "k={k}");
        }
        assert_eq!(w.get(299), 0.0);
        assert_eq!(w.hi(), 500);
    }

    #[test]
    fn support_window_holds_mass() {
        for n in [1u64, 10, 1000, 40_000] {
            let (lo, hi) = binomial_support(n, 0.1, 1e-14);
            let w = binomial_pmf_window(n, 0.1, lo, hi);
            let s: f64 = w.values.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "n={n} s={s}");
        }
    }

    proptest! {
        #[test]
        fn completeness(n in 0u64..1000, r in 0.0f64..=1.0) {
            let s: f64 = (0..=n).map(|k| bs_amplitude(k, n, r).unwrap().to_f64().powi(2)).sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
        }

        #[test]
        fn binomial_symmetry(n in 0u64..5000, k in 0u64..5000) {
            prop_assume!(k <= n);
            prop_assert!((ln_binomial(n, k) - ln_binomial(n, n - k)).abs() < 1e-9);
        }
    }
}
