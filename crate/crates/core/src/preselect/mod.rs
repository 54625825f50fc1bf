//! Beamsplitter preselection.
//!
//! Each amplified state meets a polarization-independent beamsplitter of
//! reflectivity `R`; the state is kept when the reflected beam holds at least
//! `K_th` photons. Reflected outcomes are `(n_r, m_r)` per polarization.
//!
//! Two evaluation routes exist. [`BranchEnsemble`] enumerates accepted
//! outcomes and their transmitted amplitudes, and builds rotated Gram
//! matrices with explicit kernels; it is exact but only practical at small
//! gain. [`reduced`] works from reflection profiles of the two photon-number
//! marginals and reaches `m = 10³`.

pub mod cache;
pub mod reduced;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::macrostate::{Branch, GammaTable, ModeQ, QStorage};
use crate::measure::{partition, ObservableKind, ObservableSpec};
use crate::numerics::{
    binomial_pmf_window, binomial_support, bs_amplitude, rotation_kernel, Accumulator, Grid2, LogScalar,
    RotationKernel,
};

/// Acceptance rule on the total reflected count `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Acceptance {
    /// `k ≥ K_th`
    AtLeast,
    /// `k > K_th`
    Above,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub r: f64,
    pub k_th: u64,
    pub acceptance: Acceptance,
}

impl SplitParams {
    pub fn new(r: f64, k_th: u64) -> Result<Self> {
        Self::with_acceptance(r, k_th, Acceptance::AtLeast)
    }

    pub fn with_acceptance(r: f64, k_th: u64, acceptance: Acceptance) -> Result<Self> {
        if !(r > 0.0 && r <= 0.5) {
            return domain(format!("reflectivity must lie in (0, 0.5], got {r}"));
        }
        Ok(SplitParams { r, k_th, acceptance })
    }

    /// Smallest accepted total reflected count.
    pub fn min_reflected(&self) -> u64 {
        match self.acceptance {
            Acceptance::AtLeast => self.k_th,
            Acceptance::Above => self.k_th + 1,
        }
    }

    pub fn accepts(&self, k: u64) -> bool {
        k >= self.min_reflected()
    }

    /// Informational lower bound on transmitted photons, `K_th (1 − 2R) / (2R)`.
    pub fn n_th_estimate(&self) -> f64 {
        self.k_th as f64 * (1.0 - 2.0 * self.r) / (2.0 * self.r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectedOutcome {
    pub n_r: u64,
    pub m_r: u64,
    pub accepted: bool,
}

/// Default cap on the number of enumerated outcomes.
pub const DEFAULT_MAX_OUTCOMES: usize = 2_000_000;

/// `P(r) = Σ_n d(n) Bin(r; n, R)`: distribution of reflected photons from one polarization.
pub fn reflected_marginal(dist: &[f64], r: f64, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; dist.len()];
    for (n, &w) in dist.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let (lo, hi) = binomial_support(n as u64, r, eps);
        let win = binomial_pmf_window(n as u64, r, lo, hi);
        for (k, p) in win.values.iter().enumerate() {
            out[lo as usize + k] += w * p;
        }
    }
    out
}

/// Index past which the remaining mass of `xs` is below `eps`.
fn mass_cutoff(xs: &[f64], eps: f64) -> usize {
    let mut tail = 0.0;
    for k in (0..xs.len()).rev() {
        tail += xs[k];
        if tail >= eps {
            return k + 1;
        }
    }
    0
}

/// Accepted reflected outcomes with their transmitted amplitudes, generated on demand.
#[derive(Clone, Debug)]
pub struct BranchEnsemble {
    pub table: GammaTable,
    pub split: SplitParams,
    pub outcomes: Vec<ReflectedOutcome>,
    /// `[Φ, Φ⊥]` weight of each accepted outcome.
    pub weights: Vec<[f64; 2]>,
    /// Total weight of rejected outcomes (same for both branches).
    pub rejected: f64,
}

pub fn branch_ensemble(table: &GammaTable, split: SplitParams) -> Result<BranchEnsemble> {
    branch_ensemble_with_budget(table, split, DEFAULT_MAX_OUTCOMES)
}

pub fn branch_ensemble_with_budget(
    table: &GammaTable,
    split: SplitParams,
    max_outcomes: usize,
) -> Result<BranchEnsemble> {
    let f = table.seeded_marginal();
    let g = table.idler_marginal();
    let eps = 1e-17;
    let pf = reflected_marginal(&f, split.r, eps);
    let pg = reflected_marginal(&g, split.r, eps);
    // keep reflected counts until the discarded marginal mass is negligible
    let cut = 1e-13 * table.tail_eps.min(1.0);
    let n1 = mass_cutoff(&pf, cut).max(mass_cutoff(&pg, cut)).max(1);
    let n2 = n1;
    let kmin = split.min_reflected();
    let mut accepted_count = 0usize;
    for r1 in 0..n1 as u64 {
        let lo = kmin.saturating_sub(r1);
        if (lo as usize) < n2 {
            accepted_count += n2 - lo as usize;
        }
    }
    if accepted_count > max_outcomes {
        return Err(Error::Resource(format!(
            "{accepted_count} accepted reflected outcomes exceed the budget of {max_outcomes}"
        )));
    }
    let at = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
    let mut outcomes = Vec::with_capacity(accepted_count);
    let mut weights = Vec::with_capacity(accepted_count);
    let mut rejected = Accumulator::fast();
    for r1 in 0..n1 {
        for r2 in 0..n2 {
            let w_phi = at(&pf, r1) * at(&pg, r2);
            let w_perp = at(&pg, r1) * at(&pf, r2);
            if split.accepts((r1 + r2) as u64) {
                outcomes.push(ReflectedOutcome { n_r: r1 as u64, m_r: r2 as u64, accepted: true });
                weights.push([w_phi, w_perp]);
            } else {
                rejected.add_f64(w_phi);
            }
        }
    }
    Ok(BranchEnsemble { table: table.clone(), split, outcomes, weights, rejected: rejected.value_f64() })
}

impl BranchEnsemble {
    /// Transmitted amplitudes `(u, v, amplitude)` of `branch` for accepted outcome `idx`.
    ///
    /// Input photon numbers are `n_φ = u + n_r`, `n_⊥ = v + m_r` and the
    /// amplitude is `⟨n_φ, n_⊥|branch⟩ c_{n_r}^{(n_φ)} c_{m_r}^{(n_⊥)}`.
    pub fn amplitudes(&self, branch: Branch, idx: usize) -> Vec<(u64, u64, LogScalar)> {
        let o = self.outcomes[idx];
        let seeded_max = 2 * self.table.imax as u64 + 1;
        let idler_max = 2 * self.table.jmax as u64;
        let (phi_max, perp_max) = match branch {
            Branch::Phi => (seeded_max, idler_max),
            Branch::Perp => (idler_max, seeded_max),
        };
        let mut out = Vec::new();
        let mut n_phi = o.n_r;
        while n_phi <= phi_max {
            let mut n_perp = o.m_r;
            while n_perp <= perp_max {
                let a = self.table.amplitude(branch, n_phi as usize, n_perp as usize);
                if !a.is_zero() {
                    let c1 = bs_amplitude(o.n_r, n_phi, self.split.r).expect("n_r ≤ n_φ");
                    let c2 = bs_amplitude(o.m_r, n_perp, self.split.r).expect("m_r ≤ n_⊥");
                    let amp = a * c1 * c2;
                    if !amp.is_zero() {
                        out.push((n_phi - o.n_r, n_perp - o.m_r, amp));
                    }
                }
                n_perp += 1;
            }
            n_phi += 1;
        }
        out
    }

    /// Largest transmitted total `u + v` that can occur.
    pub fn max_total(&self) -> usize {
        2 * self.table.imax + 1 + 2 * self.table.jmax
    }
}

/// Success probability: total accepted weight of branch `Φ`.
pub fn success_probability(ens: &BranchEnsemble) -> f64 {
    let mut a = Accumulator::fast();
    for w in &ens.weights {
        a.add_f64(w[0]);
    }
    a.value_f64().clamp(0.0, 1.0)
}

/// Diagonal of the transmitted density operator of `branch`, normalized by `p`.
pub fn preselected_q(ens: &BranchEnsemble, branch: Branch) -> Result<ModeQ> {
    let p = success_probability(ens);
    if p <= 0.0 {
        return Err(Error::Degenerate("no accepted outcomes: success probability is zero".into()));
    }
    let dim = ens.max_total() + 1;
    let parts: Vec<Vec<(u64, u64, f64)>> = (0..ens.outcomes.len())
        .into_par_iter()
        .map(|i| ens.amplitudes(branch, i).into_iter().map(|(u, v, a)| (u, v, a.norm_sqr().to_f64())).collect())
        .collect();
    let mut grid = Grid2::zeros(dim, dim);
    for part in parts {
        for (u, v, w) in part {
            let (u, v) = (u as usize, v as usize);
            let x = grid.get(u, v) + w;
            grid.set(u, v, x);
        }
    }
    let (rows, cols) = trim(&grid);
    let mut grid = grid.resized(rows, cols);
    grid.scale(1.0 / p);
    Ok(ModeQ { branch, bin: 1, normalization: p, storage: QStorage::Dense(grid) })
}

fn trim(g: &Grid2) -> (usize, usize) {
    let rm = g.row_marginal();
    let cm = g.col_marginal();
    let last = |v: &[f64]| v.iter().rposition(|&x| x != 0.0).map_or(1, |k| k + 1);
    (last(&rm), last(&cm))
}

pub type Mat2 = [[Complex64; 2]; 2];

pub fn zero_mat() -> Mat2 {
    [[Complex64::new(0.0, 0.0); 2]; 2]
}

/// Gram matrix restricted to one outcome class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGram {
    pub eigenvalue: i8,
    /// `g[b][b'] = Σ_r ⟨Φ̃_b(r)| Π_class |Φ̃_b'(r)⟩`, branches indexed `[Φ, Φ⊥]`.
    pub g: Mat2,
}

/// Branch-pair sums for one mode: identity Gram `s` and, when a setting is
/// given, one rotated Gram per outcome class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramSet {
    pub s: Mat2,
    pub theta: Option<f64>,
    pub kind: Option<ObservableKind>,
    pub n_sigma: Option<u64>,
    pub classes: Vec<ClassGram>,
}

impl GramSet {
    /// `Σ_class eigenvalue · G(class)`.
    pub fn observable(&self) -> Mat2 {
        let mut m = zero_mat();
        for c in &self.classes {
            for (i, row) in c.g.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    m[i][j] += *x * c.eigenvalue as f64;
                }
            }
        }
        m
    }

    /// Sum of class Grams, which equals `s` for a complete partition.
    pub fn class_total(&self) -> Mat2 {
        let mut m = zero_mat();
        for c in &self.classes {
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] += c.g[i][j];
                }
            }
        }
        m
    }
}

/// Per-total kernels up to `max_total`.
fn kernels(max_total: usize, theta: f64) -> Vec<RotationKernel> {
    (0..=max_total).into_par_iter().map(|t| rotation_kernel(t, theta)).collect()
}

fn to_c(x: LogScalar) -> Complex64 {
    Complex64::new(x.to_f64(), 0.0)
}

struct MatAcc([[(Accumulator, Accumulator); 2]; 2]);

impl MatAcc {
    fn new() -> Self {
        MatAcc(std::array::from_fn(|_| std::array::from_fn(|_| (Accumulator::fast(), Accumulator::fast()))))
    }

    fn add(&mut self, i: usize, j: usize, z: Complex64) {
        self.0[i][j].0.add_f64(z.re);
        self.0[i][j].1.add_f64(z.im);
    }

    fn merge(&mut self, o: &MatAcc) {
        for i in 0..2 {
            for j in 0..2 {
                self.0[i][j].0.merge(&o.0[i][j].0);
                self.0[i][j].1.merge(&o.0[i][j].1);
            }
        }
    }

    fn value(&self) -> Mat2 {
        let mut m = zero_mat();
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = Complex64::new(self.0[i][j].0.value_f64(), self.0[i][j].1.value_f64());
            }
        }
        m
    }
}

/// Gram matrices by explicit rotation of every transmitted amplitude vector.
///
/// For each accepted outcome and transmitted total `T`, the length-`T+1`
/// vectors of both branches are rotated with the kernel for `(T, θ)` and
/// class-weighted inner products are accumulated. Outcomes are reduced in
/// index order, so the result does not depend on the thread count.
pub fn gram_set(ens: &BranchEnsemble, setting: Option<&ObservableSpec>) -> GramSet {
    let max_t = ens.max_total();
    let ks = setting.map(|s| kernels(max_t, s.theta));
    let part = setting.map(partition);
    let n_classes = part.as_ref().map_or(0, |p| p.classes.len());

    let per_outcome: Vec<(MatAcc, Vec<MatAcc>)> = (0..ens.outcomes.len())
        .into_par_iter()
        .map(|idx| {
            let mut vecs: [Vec<Vec<Complex64>>; 2] = [Vec::new(), Vec::new()];
            for b in [Branch::Phi, Branch::Perp] {
                let v = &mut vecs[b.index()];
                v.resize(max_t + 1, Vec::new());
                for (u, w, a) in ens.amplitudes(b, idx) {
                    let t = (u + w) as usize;
                    if v[t].is_empty() {
                        v[t] = vec![Complex64::new(0.0, 0.0); t + 1];
                    }
                    v[t][u as usize] = to_c(a);
                }
            }
            let mut s = MatAcc::new();
            let mut cls: Vec<MatAcc> = (0..n_classes).map(|_| MatAcc::new()).collect();
            for t in 0..=max_t {
                let (a, b) = (&vecs[0][t], &vecs[1][t]);
                if a.is_empty() && b.is_empty() {
                    continue;
                }
                let zero = vec![Complex64::new(0.0, 0.0); t + 1];
                let pair = [if a.is_empty() { &zero } else { a }, if b.is_empty() { &zero } else { b }];
                for i in 0..2 {
                    for j in 0..2 {
                        let z: Complex64 = pair[i].iter().zip(pair[j]).map(|(x, y)| x.conj() * y).sum();
                        s.add(i, j, z);
                    }
                }
                if let (Some(ks), Some(p)) = (ks.as_ref(), part.as_ref()) {
                    let rot = [ks[t].apply(pair[0]), ks[t].apply(pair[1])];
                    for u in 0..=t {
                        let c = p.class_index(u as u64, (t - u) as u64);
                        for i in 0..2 {
                            for j in 0..2 {
                                cls[c].add(i, j, rot[i][u].conj() * rot[j][u]);
                            }
                        }
                    }
                }
            }
            (s, cls)
        })
        .collect();

    let mut s = MatAcc::new();
    let mut cls: Vec<MatAcc> = (0..n_classes).map(|_| MatAcc::new()).collect();
    for (ps, pc) in &per_outcome {
        s.merge(ps);
        for (a, b) in cls.iter_mut().zip(pc) {
            a.merge(b);
        }
    }
    let classes = match part.as_ref() {
        Some(p) => p
            .classes
            .iter()
            .zip(&cls)
            .map(|(c, acc)| ClassGram { eigenvalue: c.eigenvalue, g: acc.value() })
            .collect(),
        None => Vec::new(),
    };
    GramSet {
        s: s.value(),
        theta: setting.map(|s| s.theta),
        kind: setting.map(|s| s.kind),
        n_sigma: setting.map(|s| s.n_sigma),
        classes,
    }
}
