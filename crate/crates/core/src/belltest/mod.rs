//! Singlet assembly, correlations and CHSH statistics.
//!
//! The two spatial modes carry `(|Φ⟩_A|Φ⊥⟩_B − |Φ⊥⟩_A|Φ⟩_B)/√2`. After
//! preselection on both modes and tracing the reflected beams, any product
//! observable `O_A ⊗ O_B` has expectation
//!
//! ```text
//! G^A_ΦΦ G^B_⊥⊥ + G^A_⊥⊥ G^B_ΦΦ − G^A_Φ⊥ G^B_⊥Φ − G^A_⊥Φ G^B_Φ⊥
//! ```
//!
//! divided by the same combination of identity Grams.
//!
//! CHSH combination: `B = E(a,b) − E(a,b') + E(a',b) + E(a',b')`. With the
//! default angles `a = 0, a' = π/4, b = π/8, b' = 3π/8` and
//! `E = −cos 2(θ_b − θ_a)` this reaches `−2√2`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::measure::{loophole, ObservableKind, ObservableSpec};
use crate::cache::CacheDir;
use crate::preselect::cache::class_weights_cached;
use crate::preselect::reduced::{identity_gram, ClassWeights, ReducedModel};
use crate::preselect::{gram_set, success_probability, BranchEnsemble, GramSet, Mat2};

/// Anything that can produce per-mode Gram sets.
pub trait GramSource: Sync {
    fn success_probability(&self) -> f64;
    /// Identity-observable Gram `S`.
    fn identity(&self) -> Mat2;
    fn gram(&self, spec: &ObservableSpec) -> Result<GramSet>;
}

impl GramSource for BranchEnsemble {
    fn success_probability(&self) -> f64 {
        success_probability(self)
    }

    fn identity(&self) -> Mat2 {
        gram_set(self, None).s
    }

    fn gram(&self, spec: &ObservableSpec) -> Result<GramSet> {
        Ok(gram_set(self, Some(spec)))
    }
}

/// One preselection threshold of a [`ReducedModel`].
#[derive(Clone, Copy, Debug)]
pub struct ReducedSource<'a> {
    pub model: &'a ReducedModel,
    pub k_min: u64,
    /// Class weights are read from and written to this directory when set.
    pub cache: Option<&'a CacheDir>,
}

impl<'a> ReducedSource<'a> {
    pub fn new(model: &'a ReducedModel, k_min: u64) -> Self {
        ReducedSource { model, k_min, cache: None }
    }

    pub fn with_cache(self, cache: Option<&'a CacheDir>) -> Self {
        ReducedSource { cache, ..self }
    }

    pub fn class_weights(&self, kind: ObservableKind, n_sigma: u64) -> Result<ClassWeights> {
        class_weights_cached(self.cache, self.model, kind, n_sigma, self.k_min)
    }
}

impl GramSource for ReducedSource<'_> {
    fn success_probability(&self) -> f64 {
        self.model.success_probability(self.k_min)
    }

    fn identity(&self) -> Mat2 {
        identity_gram(self.success_probability())
    }

    fn gram(&self, spec: &ObservableSpec) -> Result<GramSet> {
        Ok(self.class_weights(spec.kind, spec.n_sigma)?.gram_at(spec.theta))
    }
}

/// Precomputed class weights for a fixed `(kind, Nσ)`; rotating is free.
#[derive(Clone, Debug)]
pub struct WeightSource(pub ClassWeights);

impl GramSource for WeightSource {
    fn success_probability(&self) -> f64 {
        self.0.p
    }

    fn identity(&self) -> Mat2 {
        identity_gram(self.0.p)
    }

    fn gram(&self, spec: &ObservableSpec) -> Result<GramSet> {
        if spec.kind != self.0.kind || spec.n_sigma != self.0.n_sigma {
            return Err(Error::Usage(format!(
                "weights were computed for {} at Nσ = {}, asked for {} at Nσ = {}",
                self.0.kind, self.0.n_sigma, spec.kind, spec.n_sigma
            )));
        }
        Ok(self.0.gram_at(spec.theta))
    }
}

/// `G^A_ΦΦ G^B_⊥⊥ + G^A_⊥⊥ G^B_ΦΦ − G^A_Φ⊥ G^B_⊥Φ − G^A_⊥Φ G^B_Φ⊥`.
pub fn bilinear(a: &Mat2, b: &Mat2) -> Complex64 {
    a[0][0] * b[1][1] + a[1][1] * b[0][0] - a[0][1] * b[1][0] - a[1][0] * b[0][1]
}

/// Weighted observable matrix `Σ_class eigenvalue · G(class)`.
fn observable(g: &GramSet) -> Mat2 {
    g.observable()
}

/// Largest imaginary residue tolerated in an expectation value.
pub const IMAG_TOLERANCE: f64 = 1e-10;

pub struct SingletContext<'a> {
    pub a: &'a dyn GramSource,
    pub b: &'a dyn GramSource,
    s_a: Mat2,
    s_b: Mat2,
    norm: f64,
}

impl<'a> SingletContext<'a> {
    pub fn new(a: &'a dyn GramSource, b: &'a dyn GramSource) -> Self {
        let s_a = a.identity();
        let s_b = b.identity();
        let norm = bilinear(&s_a, &s_b).re;
        SingletContext { a, b, s_a, s_b, norm }
    }

    /// Both modes with the same parameters.
    pub fn symmetric(src: &'a dyn GramSource) -> Self {
        Self::new(src, src)
    }

    pub fn identity_a(&self) -> Mat2 {
        self.s_a
    }

    pub fn identity_b(&self) -> Mat2 {
        self.s_b
    }

    /// Singlet norm after preselection (twice the squared overall weight).
    pub fn normalization(&self) -> Result<f64> {
        if !(self.norm > 0.0) || !self.norm.is_finite() {
            return Err(Error::Degenerate(format!("singlet normalization is {}", self.norm)));
        }
        Ok(self.norm)
    }

    fn expectation(&self, ga: &Mat2, gb: &Mat2) -> Result<f64> {
        let norm = self.normalization()?;
        let v = bilinear(ga, gb) / norm;
        if v.im.abs() > IMAG_TOLERANCE {
            return Err(Error::Degenerate(format!("expectation has imaginary part {}", v.im)));
        }
        Ok(v.re)
    }

    /// Joint probability of every pair of outcome classes `(e_A, e_B)`.
    pub fn joint_class_probabilities(
        &self,
        spec_a: &ObservableSpec,
        spec_b: &ObservableSpec,
    ) -> Result<BTreeMap<(i8, i8), f64>> {
        let ga = self.a.gram(spec_a)?;
        let gb = self.b.gram(spec_b)?;
        let mut out = BTreeMap::new();
        for x in &ga.classes {
            for y in &gb.classes {
                let p = self.expectation(&x.g, &y.g)?;
                *out.entry((x.eigenvalue, y.eigenvalue)).or_insert(0.0) += p;
            }
        }
        Ok(out)
    }

    /// `E(θ_a, θ_b)` for observable `kind` with partition `n_sigma` on both modes.
    pub fn correlation(&self, theta_a: f64, theta_b: f64, kind: ObservableKind, n_sigma: u64) -> Result<f64> {
        let ga = self.a.gram(&ObservableSpec::new(kind, n_sigma, theta_a))?;
        let gb = self.b.gram(&ObservableSpec::new(kind, n_sigma, theta_b))?;
        self.expectation(&observable(&ga), &observable(&gb))
    }
}

/// Free-function form of [`SingletContext::correlation`].
pub fn correlation(ctx: &SingletContext, theta_a: f64, theta_b: f64, kind: ObservableKind, n_sigma: u64) -> Result<f64> {
    ctx.correlation(theta_a, theta_b, kind, n_sigma)
}

/// Measurement angles `(a, a', b, b')`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Default for Angles {
    fn default() -> Self {
        Angles { a: 0.0, a_prime: PI / 4.0, b: PI / 8.0, b_prime: 3.0 * PI / 8.0 }
    }
}

impl Angles {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a, ap, b, bp] => Ok(Angles { a: *a, a_prime: *ap, b: *b, b_prime: *bp }),
            _ => Err(Error::Usage(format!("expected four angles a,a',b,b', got {}", v.len()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellReport {
    pub kind: ObservableKind,
    pub k_th: u64,
    pub n_sigma: u64,
    pub angles: Angles,
    /// `E(0, 0)`
    pub e00: f64,
    pub e_ab: f64,
    pub e_abp: f64,
    pub e_apb: f64,
    pub e_apbp: f64,
    pub bell: f64,
    /// Probability that at least one mode lands in the zero class of `A`.
    pub loophole: f64,
    /// Zero-class probability of `A` on a single mode.
    pub loophole_per_mode: f64,
    /// Per-mode success probability.
    pub p: f64,
}

/// `E(a,b) − E(a,b') + E(a',b) + E(a',b')`.
pub fn chsh(e_ab: f64, e_abp: f64, e_apb: f64, e_apbp: f64) -> f64 {
    e_ab - e_abp + e_apb + e_apbp
}

impl BellReport {
    /// Bell value recomputed from the stored correlations.
    pub fn recomputed_bell(&self) -> f64 {
        chsh(self.e_ab, self.e_abp, self.e_apb, self.e_apbp)
    }

    pub fn violates(&self) -> bool {
        self.bell.abs() > 2.0
    }
}

/// Correlations at the four settings, the aligned correlation and the loophole weight.
pub fn bell_parameter(
    ctx: &SingletContext,
    angles: Angles,
    kind: ObservableKind,
    n_sigma: u64,
    k_th: u64,
) -> Result<BellReport> {
    let e = |x: f64, y: f64| ctx.correlation(x, y, kind, n_sigma);
    let e00 = e(0.0, 0.0)?;
    let e_ab = e(angles.a, angles.b)?;
    let e_abp = e(angles.a, angles.b_prime)?;
    let e_apb = e(angles.a_prime, angles.b)?;
    let e_apbp = e(angles.a_prime, angles.b_prime)?;
    let (per_mode, either) = loophole(ctx, n_sigma)?;
    Ok(BellReport {
        kind,
        k_th,
        n_sigma,
        angles,
        e00,
        e_ab,
        e_abp,
        e_apb,
        e_apbp,
        bell: chsh(e_ab, e_abp, e_apb, e_apbp),
        loophole: either,
        loophole_per_mode: per_mode,
        p: ctx.a.success_probability(),
    })
}

/// One sweep point: the report or the error that stopped it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k_th: u64,
    pub n_sigma: u64,
    pub kind: ObservableKind,
    pub report: std::result::Result<BellReport, String>,
}

/// Threshold on the reflected count as a minimum accepted count.
fn k_min(k_th: u64, strict: bool) -> u64 {
    if strict {
        k_th + 1
    } else {
        k_th
    }
}

/// Bell reports over `k_ths × n_sigmas × kinds` for one reduced model.
///
/// Reflection profiles depend only on the split point, so they are shared
/// across thresholds; points are evaluated in order and a failing point is
/// recorded without stopping the sweep.
pub fn sweep(
    model: &ReducedModel,
    k_ths: &[u64],
    n_sigmas: &[u64],
    kinds: &[ObservableKind],
    angles: Angles,
    strict: bool,
    cache: Option<&CacheDir>,
) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for &k in k_ths {
        for &ns in n_sigmas {
            for &kind in kinds {
                out.push(SweepPoint { k_th: k, n_sigma: ns, kind, report: sweep_point(model, k, ns, kind, angles, strict, cache) });
            }
        }
    }
    out
}

/// A single sweep point.
pub fn sweep_point(
    model: &ReducedModel,
    k_th: u64,
    n_sigma: u64,
    kind: ObservableKind,
    angles: Angles,
    strict: bool,
    cache: Option<&CacheDir>,
) -> std::result::Result<BellReport, String> {
    let src = ReducedSource::new(model, k_min(k_th, strict)).with_cache(cache);
    let ctx = SingletContext::symmetric(&src);
    bell_parameter(&ctx, angles, kind, n_sigma, k_th).map_err(|e| e.to_string())
}

/// Detector uncertainty on `K_th`: mixture over every integer threshold in
/// `[K − half_width, K + half_width]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    /// Mixture of the per-threshold reports; `k_th` is the window centre.
    pub mixture: BellReport,
    pub k_lo: u64,
    pub k_hi: u64,
    pub bell_min: f64,
    pub bell_max: f64,
    /// Per-threshold Bell values.
    pub per_k: Vec<(u64, f64)>,
}

/// Mixture with weights proportional to the joint success probability `p_K²`
/// (both modes must pass the same threshold).
pub fn kth_window_mixture(
    model: &ReducedModel,
    k_meas: u64,
    half_width: u64,
    n_sigma: u64,
    kind: ObservableKind,
    angles: Angles,
    strict: bool,
    cache: Option<&CacheDir>,
) -> Result<MixtureReport> {
    let k_lo = k_meas.saturating_sub(half_width);
    let k_hi = k_meas + half_width;
    let mut reports = Vec::new();
    for k in k_lo..=k_hi {
        let src = ReducedSource::new(model, k_min(k, strict)).with_cache(cache);
        let ctx = SingletContext::symmetric(&src);
        match bell_parameter(&ctx, angles, kind, n_sigma, k) {
            Ok(r) => reports.push(r),
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    mix(reports, k_meas, k_lo, k_hi)
}

/// Combine per-threshold reports with `p²` weights.
pub fn mix(reports: Vec<BellReport>, k_meas: u64, k_lo: u64, k_hi: u64) -> Result<MixtureReport> {
    let total: f64 = reports.iter().map(|r| r.p * r.p).sum();
    if reports.is_empty() || !(total > 0.0) {
        return domain(format!("threshold window [{k_lo}, {k_hi}] has no accepted outcomes"));
    }
    let avg = |f: &dyn Fn(&BellReport) -> f64| reports.iter().map(|r| r.p * r.p * f(r)).sum::<f64>() / total;
    let first = &reports[0];
    let mut mixture = BellReport {
        kind: first.kind,
        k_th: k_meas,
        n_sigma: first.n_sigma,
        angles: first.angles,
        e00: avg(&|r| r.e00),
        e_ab: avg(&|r| r.e_ab),
        e_abp: avg(&|r| r.e_abp),
        e_apb: avg(&|r| r.e_apb),
        e_apbp: avg(&|r| r.e_apbp),
        bell: 0.0,
        loophole: avg(&|r| r.loophole),
        loophole_per_mode: avg(&|r| r.loophole_per_mode),
        p: reports.iter().map(|r| r.p).sum::<f64>() / reports.len() as f64,
    };
    if reports.len() == 1 {
        mixture = BellReport { k_th: k_meas, ..first.clone() };
    } else {
        mixture.bell = mixture.recomputed_bell();
    }
    let per_k: Vec<(u64, f64)> = reports.iter().map(|r| (r.k_th, r.bell)).collect();
    let bell_min = per_k.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let bell_max = per_k.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(MixtureReport { mixture, k_lo, k_hi, bell_min, bell_max, per_k })
}

/// `N_σ` giving the strongest singlet anticorrelation (most negative `E(0,0)`)
/// among `candidates`. A partition that makes the observable constant gives
/// `E = +1` and is never chosen.
pub fn best_n_sigma(ctx: &SingletContext, kind: ObservableKind, candidates: &[u64]) -> Result<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for &ns in candidates {
        let e = ctx.correlation(0.0, 0.0, kind, ns)?;
        if best.map_or(true, |b| e < b.1) {
            best = Some((ns, e));
        }
    }
    best.ok_or_else(|| Error::Usage("no N_σ candidates".into()))
}
