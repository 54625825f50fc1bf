//! Preselection statistics from reflection profiles.
//!
//! Acceptance depends on the reflected total only, which commutes with the
//! measurement rotation on the reflected beam. The rotation can therefore be
//! moved in front of the splitter, where it maps `Φ → cos θ Φ + i sin θ Φ⊥`.
//! Every class Gram at angle `θ` then follows from two numbers per class,
//! `g_Φ(c)` and `g_⊥(c)`, the accepted probability of branch `Φ` and `Φ⊥` in
//! that class at `θ = 0` (cross terms vanish there by parity):
//!
//! ```text
//! X = (g_Φ + g_⊥)/2,  Y = (g_Φ − g_⊥)/2
//! G_ΦΦ = X + Y cos 2θ,  G_⊥⊥ = X − Y cos 2θ,  G_Φ⊥ = i Y sin 2θ = −G_⊥Φ
//! ```
//!
//! Each `g` is a sum over rectangles `I_φ × I_⊥` of
//! `Σ_{r1} F1(r1) · Σ_{r2 ≥ K − r1} F2(r2)`, with the reflection profile
//! `F_I(r) = Σ_n d(n) Bin(r; n, R) [n − r ∈ I]` of a photon-number marginal `d`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{reflected_marginal, ClassGram, GramSet, Mat2};
use crate::error::{domain, Error, Result};
use crate::macrostate::{Branch, GainParams, GammaTable, ModeQ, QStorage};
use crate::measure::{partition, Interval, ObservableKind, ObservableSpec};
use crate::numerics::{binomial_pmf_window, binomial_support, Grid2};

/// Binomial mass discarded per input photon number when building profiles.
const PMF_EPS: f64 = 1e-18;

/// `F_{n−r < s}(r)` and `F_{n−r ≥ s}(r)` for one marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionProfile {
    pub split: u64,
    pub below: Vec<f64>,
    pub at_least: Vec<f64>,
}

fn profile(dist: &[f64], r: f64, split: u64, len: usize) -> ReflectionProfile {
    // chunks of input photon numbers are processed independently and merged in order
    let chunk = 512;
    let parts: Vec<(Vec<f64>, Vec<f64>)> = dist
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, c)| {
            let mut below = vec![0.0; len];
            let mut above = vec![0.0; len];
            for (k, &w) in c.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let n = (ci * chunk + k) as u64;
                let (lo, hi) = binomial_support(n, r, PMF_EPS);
                let win = binomial_pmf_window(n, r, lo, hi);
                for (off, p) in win.values.iter().enumerate() {
                    let rr = lo + off as u64;
                    if rr as usize >= len {
                        break;
                    }
                    if n - rr < split {
                        below[rr as usize] += w * p;
                    } else {
                        above[rr as usize] += w * p;
                    }
                }
            }
            (below, above)
        })
        .collect();
    let mut below = vec![0.0; len];
    let mut at_least = vec![0.0; len];
    for (b, a) in parts {
        for k in 0..len {
            below[k] += b[k];
            at_least[k] += a[k];
        }
    }
    ReflectionProfile { split, below, at_least }
}

/// `Σ_{r1} a(r1) · Σ_{r2 ≥ k_min − r1} b(r2)`.
pub fn accepted_weight(a: &[f64], b: &[f64], k_min: u64) -> f64 {
    let mut suffix = vec![0.0; b.len() + 1];
    for k in (0..b.len()).rev() {
        suffix[k] = suffix[k + 1] + b[k];
    }
    let mut total = 0.0;
    for (r1, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let need = k_min.saturating_sub(r1 as u64) as usize;
        total += x * suffix[need.min(b.len())];
    }
    total
}

/// Accepted probability of each branch in each outcome class at `θ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub kind: ObservableKind,
    pub n_sigma: u64,
    pub k_min: u64,
    /// Success probability (either branch).
    pub p: f64,
    /// `(eigenvalue, [g_Φ, g_⊥])`, ordered as in [`partition`].
    pub classes: Vec<(i8, [f64; 2])>,
}

impl ClassWeights {
    /// Gram set at angle `theta`.
    pub fn gram_at(&self, theta: f64) -> GramSet {
        let (c2, s2) = ((2.0 * theta).cos(), (2.0 * theta).sin());
        let classes = self
            .classes
            .iter()
            .map(|&(eigenvalue, [gp, gq])| {
                let x = 0.5 * (gp + gq);
                let y = 0.5 * (gp - gq);
                let off = Complex64::new(0.0, y * s2);
                ClassGram {
                    eigenvalue,
                    g: [[Complex64::new(x + y * c2, 0.0), off], [-off, Complex64::new(x - y * c2, 0.0)]],
                }
            })
            .collect();
        GramSet {
            s: identity_gram(self.p),
            theta: Some(theta),
            kind: Some(self.kind),
            n_sigma: Some(self.n_sigma),
            classes,
        }
    }
}

pub fn identity_gram(p: f64) -> Mat2 {
    let z = Complex64::new(0.0, 0.0);
    [[Complex64::new(p, 0.0), z], [z, Complex64::new(p, 0.0)]]
}

/// Reflection statistics of one amplified state, shared by all thresholds.
#[derive(Debug)]
pub struct ReducedModel {
    pub params: GainParams,
    pub tail_eps: f64,
    pub r: f64,
    /// Seeded and unseeded photon-number marginals.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// Reflected-count distributions `P_f`, `P_g`.
    pub pf: Vec<f64>,
    pub pg: Vec<f64>,
    profiles: Mutex<HashMap<u64, Arc<[ReflectionProfile; 2]>>>,
}

impl ReducedModel {
    pub fn new(table: &GammaTable, r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 0.5) {
            return domain(format!("reflectivity must lie in (0, 0.5], got {r}"));
        }
        let f = table.seeded_marginal();
        let g = table.idler_marginal();
        let mut pf = reflected_marginal(&f, r, PMF_EPS);
        let mut pg = reflected_marginal(&g, r, PMF_EPS);
        let len = pf.len().max(pg.len());
        pf.resize(len, 0.0);
        pg.resize(len, 0.0);
        Ok(ReducedModel {
            params: table.params,
            tail_eps: table.tail_eps,
            r,
            f,
            g,
            pf,
            pg,
            profiles: Mutex::new(HashMap::new()),
        })
    }

    pub fn reflected_len(&self) -> usize {
        self.pf.len()
    }

    /// Success probability at acceptance `k ≥ k_min`.
    pub fn success_probability(&self, k_min: u64) -> f64 {
        accepted_weight(&self.pf, &self.pg, k_min).clamp(0.0, 1.0)
    }

    /// Profiles `[f, g]` for transmitted split point `s`, computed once.
    pub fn profiles(&self, split: u64) -> Arc<[ReflectionProfile; 2]> {
        if let Some(p) = self.profiles.lock().expect("profile lock").get(&split) {
            return p.clone();
        }
        let len = self.reflected_len();
        let p = Arc::new([profile(&self.f, self.r, split, len), profile(&self.g, self.r, split, len)]);
        self.profiles.lock().expect("profile lock").entry(split).or_insert(p).clone()
    }

    fn interval_profile<'a>(&'a self, iv: Interval, which: usize, cache: &'a HashMap<u64, Arc<[ReflectionProfile; 2]>>) -> &'a [f64] {
        match iv {
            Interval::All => {
                if which == 0 {
                    &self.pf
                } else {
                    &self.pg
                }
            }
            Interval::Below(s) => &cache[&s][which].below,
            Interval::AtLeast(s) => &cache[&s][which].at_least,
        }
    }

    /// `[g_Φ, g_⊥]` for every class of `kind` at `n_sigma`, accepting `k ≥ k_min`.
    pub fn class_weights(&self, kind: ObservableKind, n_sigma: u64, k_min: u64) -> ClassWeights {
        let part = partition(&ObservableSpec::new(kind, n_sigma, 0.0));
        let mut local = HashMap::new();
        for c in &part.classes {
            for (a, b) in c.region.rectangles(n_sigma) {
                for iv in [a, b] {
                    if let Interval::Below(s) | Interval::AtLeast(s) = iv {
                        local.entry(s).or_insert_with(|| self.profiles(s));
                    }
                }
            }
        }
        let classes = part
            .classes
            .iter()
            .map(|c| {
                let mut w = [0.0; 2];
                for (iphi, iperp) in c.region.rectangles(n_sigma) {
                    // Φ: φ from the seeded marginal; Φ⊥: φ from the unseeded one
                    w[0] += accepted_weight(
                        self.interval_profile(iphi, 0, &local),
                        self.interval_profile(iperp, 1, &local),
                        k_min,
                    );
                    w[1] += accepted_weight(
                        self.interval_profile(iphi, 1, &local),
                        self.interval_profile(iperp, 0, &local),
                        k_min,
                    );
                }
                (c.eigenvalue, w)
            })
            .collect();
        ClassWeights { kind, n_sigma, k_min, p: self.success_probability(k_min), classes }
    }
}

/// Per-bin reflected profiles: `vals[I][r − lo[I]] = Σ_{u ∈ bin I} d(u + r) Bin(r; u + r, R)`.
struct BinnedProfile {
    lo: Vec<usize>,
    vals: Vec<Vec<f64>>,
}

impl BinnedProfile {
    fn new(dist: &[f64], r: f64, bin: usize, eps: f64) -> Self {
        let nbins = dist.len() / bin + 1;
        let mut lo = vec![usize::MAX; nbins];
        let mut hi = vec![0usize; nbins];
        let mut windows = Vec::new();
        for (n, &w) in dist.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (a, b) = binomial_support(n as u64, r, eps);
            windows.push((n, w, a as usize, b as usize));
            let (ilo, ihi) = ((n - b as usize) / bin, (n - a as usize) / bin);
            for i in ilo..=ihi {
                lo[i] = lo[i].min(a as usize);
                hi[i] = hi[i].max(b as usize);
            }
        }
        let mut vals: Vec<Vec<f64>> =
            (0..nbins).map(|i| if lo[i] == usize::MAX { Vec::new() } else { vec![0.0; hi[i] - lo[i] + 1] }).collect();
        for (n, w, a, b) in windows {
            let win = binomial_pmf_window(n as u64, r, a as u64, b as u64);
            for (off, p) in win.values.iter().enumerate() {
                let rr = a + off;
                let i = (n - rr) / bin;
                vals[i][rr - lo[i]] += w * p;
            }
        }
        for i in 0..nbins {
            if lo[i] == usize::MAX {
                lo[i] = 0;
            }
        }
        BinnedProfile { lo, vals }
    }

    fn totals(&self) -> Vec<f64> {
        self.vals.iter().map(|v| v.iter().sum()).collect()
    }

    /// Suffix sums per bin, `suffix[J][k − lo] = Σ_{r ≥ k} vals[J][r − lo]`.
    fn suffixes(&self) -> Vec<Vec<f64>> {
        self.vals
            .iter()
            .map(|v| {
                let mut s = vec![0.0; v.len() + 1];
                for k in (0..v.len()).rev() {
                    s[k] = s[k + 1] + v[k];
                }
                s
            })
            .collect()
    }
}

/// Preselected photon-number distribution of `branch`, binned with width `bin`
/// in both transmitted counts and normalized by the success probability.
///
/// Cell `(I, J)` is `Σ_{r1} A_I(r1) Σ_{r2 ≥ K − r1} B_J(r2)`; cells whose
/// acceptance condition is saturated or impossible over the whole window are
/// filled from bin totals.
pub fn preselected_q_binned(model: &ReducedModel, branch: Branch, k_min: u64, bin: usize) -> Result<ModeQ> {
    if bin == 0 {
        return Err(Error::Usage("bin width must be at least 1".into()));
    }
    let eps = PMF_EPS;
    let (d1, d2) = match branch {
        Branch::Phi => (&model.f, &model.g),
        Branch::Perp => (&model.g, &model.f),
    };
    let a = BinnedProfile::new(d1, model.r, bin, eps);
    let b = BinnedProfile::new(d2, model.r, bin, eps);
    let ta = a.totals();
    let tb = b.totals();
    let sb = b.suffixes();
    let rows = a.vals.len();
    let cols = b.vals.len();
    let data: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; cols];
            let av = &a.vals[i];
            if av.is_empty() {
                return row;
            }
            let (alo, ahi) = (a.lo[i], a.lo[i] + av.len() - 1);
            for j in 0..cols {
                let bv = &b.vals[j];
                if bv.is_empty() {
                    continue;
                }
                let (blo, bhi) = (b.lo[j], b.lo[j] + bv.len() - 1);
                let k = k_min as usize;
                if k <= alo + blo {
                    row[j] = ta[i] * tb[j];
                } else if k > ahi + bhi {
                    row[j] = 0.0;
                } else {
                    let mut s = 0.0;
                    for (off, &x) in av.iter().enumerate() {
                        let need = k.saturating_sub(alo + off);
                        let tail = if need <= blo {
                            tb[j]
                        } else if need > bhi {
                            0.0
                        } else {
                            sb[j][need - blo]
                        };
                        s += x * tail;
                    }
                    row[j] = s;
                }
            }
            row
        })
        .collect();
    let mut grid = Grid2::zeros(rows, cols);
    for (i, row) in data.into_iter().enumerate() {
        grid.data[i * cols..(i + 1) * cols].copy_from_slice(&row);
    }
    let p = grid.total();
    if !(p > 0.0) {
        return Err(Error::Degenerate("no accepted outcomes: success probability is zero".into()));
    }
    grid.scale(1.0 / p);
    Ok(ModeQ { branch, bin, normalization: p, storage: QStorage::Dense(grid) })
}

/// Overlap of the two preselected distributions at bin width `bin`.
///
/// Binning can only raise the overlap, so this is an upper bound on the
/// single-photon-resolution value and equals it at `bin = 1`.
pub fn preselected_overlap(model: &ReducedModel, k_min: u64, bin: usize) -> Result<f64> {
    let a = preselected_q_binned(model, Branch::Phi, k_min, bin)?;
    let b = preselected_q_binned(model, Branch::Perp, k_min, bin)?;
    crate::macrostate::q_overlap(&a, &b)
}
