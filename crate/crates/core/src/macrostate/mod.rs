//! Amplified single-photon states `|Φ⟩`, `|Φ⊥⟩`, their photon-number
//! distributions and overlaps.
//!
//! `γ_ij = C⁻² (−Γ/2)^i (Γ/2)^j sqrt((2i+1)!(2j)!)/(i! j!)` factorizes as
//! `α_i β_j`, a squeezed single photon in the seeded polarization times a
//! squeezed vacuum in the other, so the table stores the two factors only.

pub mod cache;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{product_overlap, smooth_1d, Grid2, LogScalar, Sign};

/// Which amplified state: seeded by a `φ` photon or a `φ⊥` photon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Phi,
    Perp,
}

impl Branch {
    pub fn other(self) -> Branch {
        match self {
            Branch::Phi => Branch::Perp,
            Branch::Perp => Branch::Phi,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Branch::Phi => 0,
            Branch::Perp => 1,
        }
    }
}

/// Amplifier gain. Exactly one of `g` and `m = sinh²g` is supplied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainParams {
    pub g: f64,
    pub m: f64,
    /// `cosh g`
    pub c: f64,
    /// `tanh g`
    pub gamma: f64,
}

impl GainParams {
    pub fn from_gain(g: f64) -> Result<Self> {
        if !g.is_finite() || g < 0.0 {
            return domain(format!("gain must be finite and non-negative, got {g}"));
        }
        let s = g.sinh();
        Ok(GainParams { g, m: s * s, c: g.cosh(), gamma: g.tanh() })
    }

    pub fn from_mean(m: f64) -> Result<Self> {
        if !m.is_finite() || m < 0.0 {
            return domain(format!("mean parameter must be finite and non-negative, got {m}"));
        }
        let c = (1.0 + m).sqrt();
        Ok(GainParams { g: m.sqrt().asinh(), m, c, gamma: (m / (1.0 + m)).sqrt() })
    }

    /// `ln C`, computed from `m` to avoid overflow.
    pub fn ln_c(&self) -> f64 {
        0.5 * self.m.ln_1p()
    }

    /// `ln Γ²`.
    pub fn ln_gamma_sq(&self) -> f64 {
        if self.m == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.m.ln() - self.m.ln_1p()
        }
    }

    pub fn gamma_sq(&self) -> f64 {
        self.m / (1.0 + self.m)
    }
}

/// Size limit for table construction, in stored factor entries.
pub const DEFAULT_MAX_INDEX: usize = 20_000_000;

/// Truncated `γ_ij` for `0 ≤ i ≤ imax`, `0 ≤ j ≤ jmax`, stored as `γ_ij = row[i] * col[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    pub params: GainParams,
    pub tail_eps: f64,
    pub imax: usize,
    pub jmax: usize,
    /// `α_i = C^{-3/2} (−Γ/2)^i sqrt((2i+1)!)/i!`
    pub row: Vec<LogScalar>,
    /// `β_j = C^{-1/2} (Γ/2)^j sqrt((2j)!)/j!`
    pub col: Vec<LogScalar>,
    /// Upper bound on the discarded probability.
    pub tail_mass: f64,
}

/// `ln α_i²` for successive `i` until the remaining tail is below `limit`.
/// Returns the values and the tail bound after the last one.
fn scan_marginal(
    ln_first: f64,
    ln_g2: f64,
    g2: f64,
    ratio_shift: f64,
    limit: f64,
    max_len: usize,
    increasing_ratio: bool,
) -> std::result::Result<(Vec<f64>, f64), usize> {
    // ratio(k) = Γ² (2k + ratio_shift) / (2k + 2) maps term k to term k+1
    let mut vals = vec![ln_first];
    if g2 == 0.0 {
        return Ok((vals, 0.0));
    }
    let ratio = |k: usize| g2 * (2.0 * k as f64 + ratio_shift) / (2.0 * k as f64 + 2.0);
    loop {
        let k = vals.len() - 1;
        let next = vals[k] + ln_g2 + ((ratio_shift - 2.0) / (2.0 * k as f64 + 2.0)).ln_1p();
        // bound on everything after index k
        let rho = if increasing_ratio { g2 } else { ratio(k + 1) };
        if rho < 1.0 {
            let tail = next.exp() / (1.0 - rho);
            if tail <= limit {
                return Ok((vals, tail));
            }
        }
        if vals.len() >= max_len {
            // estimate the length that would have been needed
            let per = -ln_g2.min(-1e-300);
            let need = vals.len() + ((next - limit.ln()) / per).max(0.0) as usize;
            return Err(need);
        }
        vals.push(next);
    }
}

impl GammaTable {
    pub fn gamma(&self, i: usize, j: usize) -> LogScalar {
        if i > self.imax || j > self.jmax {
            return LogScalar::ZERO;
        }
        self.row[i] * self.col[j]
    }

    /// `Σ |γ_ij|²` over the stored block.
    pub fn norm_sqr(&self) -> f64 {
        let a: f64 = self.row.iter().map(|x| x.norm_sqr().to_f64()).sum();
        let b: f64 = self.col.iter().map(|x| x.norm_sqr().to_f64()).sum();
        a * b
    }

    /// Photon-number distribution of the seeded polarization: `f[2i+1] = α_i²`.
    pub fn seeded_marginal(&self) -> Vec<f64> {
        let mut f = vec![0.0; 2 * self.imax + 2];
        for (i, a) in self.row.iter().enumerate() {
            f[2 * i + 1] = a.norm_sqr().to_f64();
        }
        f
    }

    /// Photon-number distribution of the other polarization: `g[2j] = β_j²`.
    pub fn idler_marginal(&self) -> Vec<f64> {
        let mut g = vec![0.0; 2 * self.jmax + 1];
        for (j, b) in self.col.iter().enumerate() {
            g[2 * j] = b.norm_sqr().to_f64();
        }
        g
    }

    /// Signed amplitude of the seeded factor as a function of photon number
    /// (`n = 2i+1`); zero elsewhere.
    pub fn seeded_amplitude(&self, n: usize) -> LogScalar {
        if n % 2 == 0 || (n - 1) / 2 > self.imax {
            LogScalar::ZERO
        } else {
            self.row[(n - 1) / 2]
        }
    }

    /// Amplitude of the unseeded factor at photon number `n = 2j`.
    pub fn idler_amplitude(&self, n: usize) -> LogScalar {
        if n % 2 == 1 || n / 2 > self.jmax {
            LogScalar::ZERO
        } else {
            self.col[n / 2]
        }
    }

    /// Fock amplitude `⟨n_φ, n_⊥ | branch⟩`.
    ///
    /// `|Φ⊥⟩` is the same amplifier applied to a `φ⊥` photon. With the
    /// amplifier acting as opposite squeezers on the two polarizations this
    /// carries an extra `(−1)^(i+j)` relative to the mirrored `|Φ⟩`
    /// amplitudes; only with that sign is the pair covariant under the
    /// equatorial rotations used for measurement.
    pub fn amplitude(&self, branch: Branch, n_phi: usize, n_perp: usize) -> LogScalar {
        match branch {
            Branch::Phi => self.seeded_amplitude(n_phi) * self.idler_amplitude(n_perp),
            Branch::Perp => {
                let a = self.seeded_amplitude(n_perp) * self.idler_amplitude(n_phi);
                if (n_perp / 2 + n_phi / 2) % 2 == 1 {
                    -a
                } else {
                    a
                }
            }
        }
    }

    /// Dense `γ` grid, for small tables only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..=self.imax).map(|i| (0..=self.jmax).map(|j| self.gamma(i, j).to_f64()).collect()).collect()
    }
}

/// Build the table with bounds grown until each marginal tail is below `tail_eps / 4`.
pub fn gamma_table(params: GainParams, tail_eps: f64) -> Result<GammaTable> {
    gamma_table_with_budget(params, tail_eps, DEFAULT_MAX_INDEX)
}

pub fn gamma_table_with_budget(params: GainParams, tail_eps: f64, max_index: usize) -> Result<GammaTable> {
    if !(tail_eps > 0.0 && tail_eps < 1.0) {
        return domain(format!("tail_eps must lie in (0, 1), got {tail_eps}"));
    }
    let ln_c = params.ln_c();
    let ln_g2 = params.ln_gamma_sq();
    let g2 = params.gamma_sq();
    let limit = tail_eps / 4.0;
    // α_i²: C^-3 (Γ²/4)^i (2i+1)!/(i!)²; ratio Γ²(2i+3)/(2i+2), decreasing
    let rows = scan_marginal(-3.0 * ln_c, ln_g2, g2, 3.0, limit, max_index, false);
    // β_j²: C^-1 (Γ²/4)^j (2j)!/(j!)²; ratio Γ²(2j+1)/(2j+2), increasing
    let cols = scan_marginal(-ln_c, ln_g2, g2, 1.0, limit, max_index, true);
    let ((ra, ta), (cb, tb)) = match (rows, cols) {
        (Ok(r), Ok(c)) => (r, c),
        (r, c) => {
            let need_i = r.err().unwrap_or(0);
            let need_j = c.err().unwrap_or(0);
            return Err(Error::Resource(format!(
                "tail_eps {tail_eps} at m = {} needs imax ≈ {need_i}, jmax ≈ {need_j}; budget is {max_index} per index",
                params.m
            )));
        }
    };
    let row = ra
        .iter()
        .enumerate()
        .map(|(i, &l)| LogScalar {
            sign: if i % 2 == 1 { Sign::Negative } else { Sign::Positive },
            logmag: 0.5 * l,
        })
        .collect::<Vec<_>>();
    let col = cb.iter().map(|&l| LogScalar::from_ln(0.5 * l)).collect::<Vec<_>>();
    Ok(GammaTable {
        params,
        tail_eps,
        imax: row.len() - 1,
        jmax: col.len() - 1,
        row,
        col,
        tail_mass: 1.0 - (1.0 - ta) * (1.0 - tb),
    })
}

/// How the cells of a [`ModeQ`] are held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QStorage {
    /// `Q(a, b) = phi[a] * perp[b]`.
    Product { phi: Vec<f64>, perp: Vec<f64> },
    Dense(Grid2),
}

/// Photon-number distribution over `(n_φ, n_⊥)`, possibly binned.
///
/// Cell `(a, b)` covers `n_φ ∈ [a·bin, (a+1)·bin)` and likewise for `n_⊥`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeQ {
    pub branch: Branch,
    pub bin: usize,
    /// Total probability held before any renormalization.
    pub normalization: f64,
    pub storage: QStorage,
}

impl ModeQ {
    pub fn shape(&self) -> (usize, usize) {
        match &self.storage {
            QStorage::Product { phi, perp } => (phi.len(), perp.len()),
            QStorage::Dense(g) => (g.rows, g.cols),
        }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        match &self.storage {
            QStorage::Product { phi, perp } => {
                phi.get(a).copied().unwrap_or(0.0) * perp.get(b).copied().unwrap_or(0.0)
            }
            QStorage::Dense(g) => g.get(a, b),
        }
    }

    pub fn total(&self) -> f64 {
        match &self.storage {
            QStorage::Product { phi, perp } => phi.iter().sum::<f64>() * perp.iter().sum::<f64>(),
            QStorage::Dense(g) => g.total(),
        }
    }

    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.storage {
            QStorage::Product { phi, perp } => {
                let (sa, sb) = (phi.iter().sum::<f64>(), perp.iter().sum::<f64>());
                (phi.iter().map(|x| x * sb).collect(), perp.iter().map(|x| x * sa).collect())
            }
            QStorage::Dense(g) => (g.row_marginal(), g.col_marginal()),
        }
    }

    /// Dense copy of the grid. For product storage this allocates `rows x cols`.
    pub fn to_grid(&self) -> Grid2 {
        match &self.storage {
            QStorage::Product { phi, perp } => Grid2::outer(phi, perp),
            QStorage::Dense(g) => g.clone(),
        }
    }

    /// Copy with total mass 1.
    pub fn normalized(&self) -> Result<ModeQ> {
        let t = self.total();
        if !(t > 0.0) {
            return Err(Error::Degenerate("distribution has no mass".into()));
        }
        let storage = match &self.storage {
            QStorage::Product { phi, perp } => {
                let (sa, sb) = (phi.iter().sum::<f64>(), perp.iter().sum::<f64>());
                QStorage::Product {
                    phi: phi.iter().map(|x| x / sa).collect(),
                    perp: perp.iter().map(|x| x / sb).collect(),
                }
            }
            QStorage::Dense(g) => {
                let mut g = g.clone();
                g.scale(1.0 / t);
                QStorage::Dense(g)
            }
        };
        Ok(ModeQ { storage, ..self.clone() })
    }

    /// Gaussian smoothing with width `sigma` photons (`sigma / bin` cells).
    pub fn smoothed(&self, sigma: f64) -> Result<ModeQ> {
        let cells = sigma / self.bin as f64;
        let storage = match &self.storage {
            QStorage::Product { phi, perp } => {
                QStorage::Product { phi: smooth_1d(phi, cells)?, perp: smooth_1d(perp, cells)? }
            }
            QStorage::Dense(g) => QStorage::Dense(crate::numerics::gaussian_smooth(g, cells)?),
        };
        Ok(ModeQ { storage, ..self.clone() })
    }

    /// Merge `factor × factor` blocks of cells; the bin width grows by `factor`.
    pub fn rebinned(&self, factor: usize) -> Result<ModeQ> {
        if factor == 0 {
            return domain("rebinning factor must be positive");
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let merge = |xs: &[f64]| -> Vec<f64> { xs.chunks(factor).map(|c| c.iter().sum()).collect() };
        let storage = match &self.storage {
            QStorage::Product { phi, perp } => QStorage::Product { phi: merge(phi), perp: merge(perp) },
            QStorage::Dense(g) => {
                let mut out = Grid2::zeros(g.rows.div_ceil(factor), g.cols.div_ceil(factor));
                for a in 0..g.rows {
                    for b in 0..g.cols {
                        let (ra, rb) = (a / factor, b / factor);
                        out.set(ra, rb, out.get(ra, rb) + g.get(a, b));
                    }
                }
                QStorage::Dense(out)
            }
        };
        Ok(ModeQ { bin: self.bin * factor, storage, ..self.clone() })
    }

    /// `Σ Q · (n_φ + n_⊥)` using bin centres when binned.
    pub fn mean_total(&self) -> f64 {
        let (a, b) = self.marginals();
        let centre = |k: usize| {
            if self.bin == 1 {
                k as f64
            } else {
                (k * self.bin) as f64 + 0.5 * (self.bin as f64 - 1.0)
            }
        };
        a.iter().enumerate().map(|(k, x)| x * centre(k)).sum::<f64>()
            + b.iter().enumerate().map(|(k, x)| x * centre(k)).sum::<f64>()
    }

    /// CSV with columns `n_phi, n_perp, probability`, nonzero cells only,
    /// probabilities at 6 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n_phi,n_perp,probability")?;
        let (rows, cols) = self.shape();
        for a in 0..rows {
            for b in 0..cols {
                let q = self.get(a, b);
                if q != 0.0 {
                    writeln!(w, "{},{},{:.5e}", a * self.bin, b * self.bin, q)?;
                }
            }
        }
        Ok(())
    }
}

/// `Q(n_φ, n_⊥) = |⟨n_φ, n_⊥|branch⟩|²` from the table, unnormalized.
pub fn q_function(table: &GammaTable, branch: Branch) -> ModeQ {
    let f = table.seeded_marginal();
    let g = table.idler_marginal();
    let (phi, perp) = match branch {
        Branch::Phi => (f, g),
        Branch::Perp => (g, f),
    };
    let normalization = phi.iter().sum::<f64>() * perp.iter().sum::<f64>();
    ModeQ { branch, bin: 1, normalization, storage: QStorage::Product { phi, perp } }
}

/// Mean of `n_φ + n_⊥` for one amplified state.
pub fn mean_total_photons(table: &GammaTable) -> f64 {
    q_function(table, Branch::Phi).mean_total()
}

/// Overlap `Σ sqrt(Q_a Q_b)` of two normalized distributions, padding shapes as needed.
pub fn q_overlap(a: &ModeQ, b: &ModeQ) -> Result<f64> {
    if a.bin != b.bin {
        return domain(format!("bin widths differ: {} vs {}", a.bin, b.bin));
    }
    let (a, b) = (a.normalized()?, b.normalized()?);
    match (&a.storage, &b.storage) {
        (QStorage::Product { phi: p1, perp: q1 }, QStorage::Product { phi: p2, perp: q2 }) => {
            Ok(product_overlap(p1, q1, p2, q2))
        }
        _ => {
            let (r1, c1) = a.shape();
            let (r2, c2) = b.shape();
            let (rows, cols) = (r1.max(r2), c1.max(c2));
            let ga = a.to_grid().resized(rows, cols);
            let gb = b.to_grid().resized(rows, cols);
            crate::numerics::bhattacharyya_overlap(&ga, &gb)
        }
    }
}

/// Overlap of the two amplified states after Gaussian smoothing with width `sigma` photons.
pub fn smoothed_overlap(table: &GammaTable, sigma: f64) -> Result<f64> {
    let a = q_function(table, Branch::Phi).smoothed(sigma)?;
    let b = q_function(table, Branch::Perp).smoothed(sigma)?;
    q_overlap(&a, &b)
}
