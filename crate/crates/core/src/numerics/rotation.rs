//! Two-mode Fock rotation kernels for `U(θ) = exp(iθ(a†b + b†a))`.
//!
//! For a fixed total `T` the kernel maps amplitudes over `|u, T-u⟩` to the
//! rotated basis: `(U ψ)_{u'} = Σ_u K[u'][u] ψ_u`. Under this convention a
//! single photon sees `[[cos θ, i sin θ], [i sin θ, cos θ]]`, i.e. a Poincaré
//! rotation by `α = 2θ`.
//!
//! Columns are generated by the three-term recurrence obtained from the
//! rotated `J_z` eigen-equation, run inward from both edges (where the closed
//! form is a single monomial) and stopped at the column's centre of mass.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::combinatorics::ln_binomial;

/// Entries whose magnitude falls below this are stored as exact zeros.
pub const FLUSH: f64 = 1e-300;

const RESCALE: f64 = 1e150;

#[derive(Clone, Debug)]
pub struct RotationKernel {
    pub total: usize,
    /// Poincaré angle, `2θ`.
    pub alpha: f64,
    /// Row-major `(T+1) x (T+1)`.
    pub entries: Vec<Complex64>,
}

impl RotationKernel {
    pub fn dim(&self) -> usize {
        self.total + 1
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim() + col]
    }

    pub fn theta(&self) -> f64 {
        0.5 * self.alpha
    }

    /// `K · v`.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let d = self.dim();
        assert_eq!(v.len(), d, "vector length must be T+1");
        (0..d)
            .map(|r| {
                let row = &self.entries[r * d..(r + 1) * d];
                row.iter().zip(v).map(|(k, x)| k * x).sum()
            })
            .collect()
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &RotationKernel) -> Vec<Complex64> {
        assert_eq!(self.total, other.total);
        let d = self.dim();
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entries[i * d + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += a * other.entries[k * d + j];
                }
            }
        }
        out
    }
}

fn i_pow(n: usize) -> Complex64 {
    match n % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Kernel for total photon number `total` and measurement angle `theta`.
pub fn rotation_kernel(total: usize, theta: f64) -> RotationKernel {
    let d = total + 1;
    let half_turns = (theta / PI).floor();
    let reduced = theta - half_turns * PI;
    // K(θ + π) = (-1)^T K(θ)
    let global = if total % 2 == 1 && (half_turns as i64).rem_euclid(2) == 1 { -1.0 } else { 1.0 };
    let mut entries = vec![Complex64::new(0.0, 0.0); d * d];

    if reduced == 0.0 {
        for u in 0..d {
            entries[u * d + u] = Complex64::new(global, 0.0);
        }
    } else if reduced == FRAC_PI_2 {
        let ph = i_pow(total) * global;
        for u in 0..d {
            entries[(total - u) * d + u] = ph;
        }
    } else {
        let cols = column_set(total, reduced);
        for (u, col) in cols.into_iter().enumerate() {
            for (w, v) in col.into_iter().enumerate() {
                entries[w * d + u] = v * global;
            }
        }
    }
    RotationKernel { total, alpha: 2.0 * theta, entries }
}

fn column_set(total: usize, theta: f64) -> Vec<Vec<Complex64>> {
    (0..=total).map(|u| column(total, u, theta)).collect()
}

/// One column `K[·][u]` for `θ` strictly inside `(0, π)` and `θ ≠ π/2`.
fn column(total: usize, u: usize, theta: f64) -> Vec<Complex64> {
    let t = total as f64;
    let (s, c) = theta.sin_cos();
    let (s2, c2) = (2.0 * theta).sin_cos();
    let is2 = Complex64::new(0.0, s2);
    let lb = 0.5 * ln_binomial(total as u64, u as u64);
    let m = 2.0 * u as f64 - t;
    let sw = |w: usize| (((w + 1) * (total - w)) as f64).sqrt();
    let diag = |w: usize| Complex64::new(m - c2 * (2.0 * w as f64 - t), 0.0);
    let mut out = vec![Complex64::new(0.0, 0.0); total + 1];

    if total == 0 {
        out[0] = Complex64::new(1.0, 0.0);
        return out;
    }

    let centre = (0.5 * t + 0.5 * m * c2).round().clamp(0.0, t) as usize;

    // lower edge: (i s)^u c^(T-u) sqrt C(T,u)
    let ln0 = lb + u as f64 * s.abs().ln() + (total - u) as f64 * c.abs().ln();
    let ph0 = i_pow(u)
        * s.signum().powi(u as i32)
        * c.signum().powi((total - u) as i32);
    {
        let mut off = ln0;
        let mut prev = Complex64::new(0.0, 0.0);
        let mut cur = ph0;
        store(&mut out, 0, cur, off);
        for w in 0..centre {
            let lower = if w == 0 { 0.0 } else { sw(w - 1) };
            let next = (diag(w) * cur + is2 * lower * prev) / (is2 * sw(w));
            prev = cur;
            cur = next;
            let mag = cur.norm();
            if mag > RESCALE {
                prev /= mag;
                cur /= mag;
                off += mag.ln();
            }
            store(&mut out, w + 1, cur, off);
        }
    }

    // upper edge: c^u (i s)^(T-u) sqrt C(T,u)
    let ln_t = lb + u as f64 * c.abs().ln() + (total - u) as f64 * s.abs().ln();
    let ph_t = i_pow(total - u)
        * c.signum().powi(u as i32)
        * s.signum().powi((total - u) as i32);
    if centre < total {
        let mut off = ln_t;
        let mut prev = Complex64::new(0.0, 0.0);
        let mut cur = ph_t;
        store(&mut out, total, cur, off);
        let mut w = total;
        while w > centre + 1 {
            let upper = if w == total { 0.0 } else { sw(w) };
            let next = (is2 * upper * prev - diag(w) * cur) / (is2 * sw(w - 1));
            prev = cur;
            cur = next;
            let mag = cur.norm();
            if mag > RESCALE {
                prev /= mag;
                cur /= mag;
                off += mag.ln();
            }
            w -= 1;
            store(&mut out, w, cur, off);
        }
    }
    out
}

fn store(out: &mut [Complex64], w: usize, scaled: Complex64, off: f64) {
    let mag = scaled.norm();
    if mag == 0.0 {
        out[w] = Complex64::new(0.0, 0.0);
        return;
    }
    let lnv = mag.ln() + off;
    out[w] = if lnv < FLUSH.ln() { Complex64::new(0.0, 0.0) } else { scaled * off.exp() };
    if !out[w].re.is_finite() || !out[w].im.is_finite() {
        out[w] = (scaled / mag) * lnv.exp();
    }
}
