//! Dense reference pipeline for tiny gains.
//!
//! Everything is built by explicit matrix action in double precision: the
//! amplifier as single-mode squeezers (`S(g)` on `φ`, `S(−g)` on `φ⊥`)
//! exponentiated on a padded Fock space, the splitter and the measurement
//! rotation as exponentials of their generators on fixed-photon-number
//! blocks. No closed-form amplitude, binomial or rotation recurrence from the
//! fast path is used.
//!
//! The pipeline refuses to run when the photon-number cutoff would discard
//! more than `leakage_limit` of the amplified state.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::belltest::{bell_parameter, Angles, GramSource, ReducedSource, SingletContext};
use crate::cache::CacheDir;
use crate::error::{Error, Result};
use crate::macrostate::{gamma_table, Branch, GainParams};
use crate::measure::{class_probabilities, partition, ObservableKind, ObservableSpec};
use crate::numerics::Grid2;
use crate::preselect::reduced::{preselected_q_binned, ReducedModel};
use crate::preselect::{branch_ensemble, preselected_q, Acceptance, SplitParams};

pub const MAX_CUTOFF: usize = 16;
pub const MAX_MEAN: f64 = 0.5;
pub const DEFAULT_LEAKAGE_LIMIT: f64 = 1e-10;

/// Fock levels added above the cutoff when exponentiating the squeezer.
const PAD: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Mean parameter `sinh² g`.
    pub m: f64,
    /// Largest photon number kept per polarization.
    pub cutoff: usize,
    pub r: f64,
    pub k_th: u64,
    pub strict: bool,
    pub n_sigma: u64,
    pub kind: ObservableKind,
    pub angles: Angles,
    pub leakage_limit: f64,
}

impl OracleConfig {
    pub fn new(m: f64, cutoff: usize, r: f64, k_th: u64, n_sigma: u64, kind: ObservableKind) -> Self {
        OracleConfig {
            m,
            cutoff,
            r,
            k_th,
            strict: false,
            n_sigma,
            kind,
            angles: Angles::default(),
            leakage_limit: DEFAULT_LEAKAGE_LIMIT,
        }
    }

    fn k_min(&self) -> u64 {
        if self.strict {
            self.k_th + 1
        } else {
            self.k_th
        }
    }

    fn split(&self) -> Result<SplitParams> {
        let acc = if self.strict { Acceptance::Above } else { Acceptance::AtLeast };
        SplitParams::with_acceptance(self.r, self.k_th, acc)
    }

    /// Angles at which class probabilities are reported.
    pub fn class_angles(&self) -> [f64; 5] {
        let a = self.angles;
        [0.0, a.a, a.a_prime, a.b, a.b_prime]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub theta: f64,
    pub eigenvalue: i8,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub p: f64,
    pub e00: f64,
    pub e_ab: f64,
    pub e_abp: f64,
    pub e_apb: f64,
    pub e_apbp: f64,
    pub bell: f64,
    pub loophole: f64,
    pub loophole_per_mode: f64,
    /// Mode-A class probabilities at each of [`OracleConfig::class_angles`].
    pub classes: Vec<ClassRow>,
    /// Preselected, normalized photon-number distributions of `Φ` and `Φ⊥`.
    pub q_phi: Grid2,
    pub q_perp: Grid2,
    /// Probability discarded by the cutoff.
    pub leakage: f64,
}

fn check(cfg: &OracleConfig) -> Result<()> {
    if cfg.cutoff == 0 || cfg.cutoff > MAX_CUTOFF {
        return Err(Error::Refused(format!("cutoff must lie in 1..={MAX_CUTOFF}, got {}", cfg.cutoff)));
    }
    if !(cfg.m >= 0.0 && cfg.m <= MAX_MEAN) {
        return Err(Error::Refused(format!("mean parameter must lie in [0, {MAX_MEAN}], got {}", cfg.m)));
    }
    cfg.split()?;
    Ok(())
}

/// `exp(θ(a† b − b† a))` on the `n`-photon block, basis `|n − k, k⟩`, acting on `|n, 0⟩`.
fn splitter_column(n: usize, r: f64) -> Vec<f64> {
    let theta = r.sqrt().asin();
    let mut gen = DMatrix::<f64>::zeros(n + 1, n + 1);
    for k in 1..=n {
        // a† b |n−k, k⟩ = sqrt((n−k+1) k) |n−k+1, k−1⟩
        let x = ((n - k + 1) as f64 * k as f64).sqrt() * theta;
        gen[(k - 1, k)] += x;
        gen[(k, k - 1)] -= x;
    }
    let u = gen.exp();
    (0..=n).map(|k| u[(k, 0)]).collect()
}

/// Squeezed `|start⟩` on a padded space, `exp((ξ/2)(a² − a†²))`, truncated to `0..=cutoff`.
fn squeezed(xi: f64, start: usize, cutoff: usize) -> (Vec<f64>, f64) {
    let d = cutoff + 1 + PAD;
    let mut gen = DMatrix::<f64>::zeros(d, d);
    for n in 2..d {
        // a² |n⟩ = sqrt(n(n−1)) |n−2⟩
        let x = 0.5 * xi * (n as f64 * (n - 1) as f64).sqrt();
        gen[(n - 2, n)] += x;
        gen[(n, n - 2)] -= x;
    }
    let u = gen.exp();
    let kept: Vec<f64> = (0..=cutoff).map(|n| u[(n, start)]).collect();
    let lost: f64 = (cutoff + 1..d).map(|n| u[(n, start)].powi(2)).sum();
    (kept, lost)
}

/// `exp(iθ(a† b + b† a))` on the `T`-photon block, basis `|u, T − u⟩`.
fn rotation(total: usize, theta: f64) -> DMatrix<Complex64> {
    let mut gen = DMatrix::<Complex64>::zeros(total + 1, total + 1);
    for u in 0..total {
        // a† b |u, T−u⟩ = sqrt((u+1)(T−u)) |u+1, T−u−1⟩
        let x = ((u + 1) as f64 * (total - u) as f64).sqrt() * theta;
        gen[(u + 1, u)] += Complex64::new(0.0, x);
        gen[(u, u + 1)] += Complex64::new(0.0, x);
    }
    gen.exp()
}

type Mat2 = [[Complex64; 2]; 2];

/// Transmitted amplitude vectors per accepted reflected outcome, grouped by total.
struct Transmitted {
    /// `[branch][outcome][T]`, each a vector over `u = 0..=T`.
    blocks: [Vec<Vec<DVector<Complex64>>>; 2],
    p: [f64; 2],
    q: [Grid2; 2],
}

fn transmit(cfg: &OracleConfig, amp: &[Vec<Vec<f64>>; 2]) -> Transmitted {
    let c = cfg.cutoff;
    let cols: Vec<Vec<f64>> = (0..=c).map(|n| splitter_column(n, cfg.r)).collect();
    let k_min = cfg.k_min() as usize;
    let tmax = 2 * c;
    let mut blocks: [Vec<Vec<DVector<Complex64>>>; 2] = [Vec::new(), Vec::new()];
    let mut p = [0.0; 2];
    let mut q = [Grid2::zeros(c + 1, c + 1), Grid2::zeros(c + 1, c + 1)];
    for k1 in 0..=c {
        for k2 in 0..=c {
            if k1 + k2 < k_min {
                continue;
            }
            for b in 0..2 {
                let mut per_t: Vec<DVector<Complex64>> = (0..=tmax).map(|t| DVector::zeros(t + 1)).collect();
                for u in 0..=c - k1 {
                    for v in 0..=c - k2 {
                        let (n1, n2) = (u + k1, v + k2);
                        let a = amp[b][n1][n2] * cols[n1][k1] * cols[n2][k2];
                        if a != 0.0 {
                            per_t[u + v][u] = Complex64::new(a, 0.0);
                            p[b] += a * a;
                            let x = q[b].get(u, v) + a * a;
                            q[b].set(u, v, x);
                        }
                    }
                }
                blocks[b].push(per_t);
            }
        }
    }
    Transmitted { blocks, p, q }
}

/// `G[b][b'] = Σ_outcomes ⟨ψ_b| U† Π U |ψ_b'⟩` for each class at angle `theta`.
fn class_grams(tr: &Transmitted, spec: &ObservableSpec, tmax: usize) -> Vec<(i8, Mat2)> {
    let part = partition(spec);
    let rots: Vec<DMatrix<Complex64>> = (0..=tmax).map(|t| rotation(t, spec.theta)).collect();
    let mut out: Vec<(i8, Mat2)> =
        part.classes.iter().map(|c| (c.eigenvalue, [[Complex64::new(0.0, 0.0); 2]; 2])).collect();
    for o in 0..tr.blocks[0].len() {
        for (t, rot) in rots.iter().enumerate() {
            let x = [rot * &tr.blocks[0][o][t], rot * &tr.blocks[1][o][t]];
            for u in 0..=t {
                let ci = part.class_index(u as u64, (t - u) as u64);
                for i in 0..2 {
                    for j in 0..2 {
                        out[ci].1[i][j] += x[i][u].conj() * x[j][u];
                    }
                }
            }
        }
    }
    out
}

fn weighted(gs: &[(i8, Mat2)]) -> Mat2 {
    let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (e, g) in gs {
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] += g[i][j] * *e as f64;
            }
        }
    }
    m
}

/// `⟨ψ|O_A ⊗ O_B|ψ⟩` for `ψ = (Φ_A Φ⊥_B − Φ⊥_A Φ_B)/√2`, unnormalized and without the 1/2.
fn singlet_pair(a: &Mat2, b: &Mat2) -> Complex64 {
    let (phi, perp) = (0, 1);
    a[phi][phi] * b[perp][perp] - a[phi][perp] * b[perp][phi] - a[perp][phi] * b[phi][perp]
        + a[perp][perp] * b[phi][phi]
}

/// Dense reference report.
pub fn dense_pipeline(cfg: &OracleConfig) -> Result<OracleReport> {
    check(cfg)?;
    let c = cfg.cutoff;
    let g = GainParams::from_mean(cfg.m)?.g;
    let (seeded, l1) = squeezed(g, 1, c);
    let (idler, l2) = squeezed(-g, 0, c);
    let kept = seeded.iter().map(|x| x * x).sum::<f64>() * idler.iter().map(|x| x * x).sum::<f64>();
    let leakage = (1.0 - kept).max(l1 + l2 - l1 * l2).max(0.0);
    if leakage > cfg.leakage_limit {
        return Err(Error::Refused(format!(
            "cutoff {c} at m = {} discards {leakage:.3e} of the state (limit {:.1e})",
            cfg.m, cfg.leakage_limit
        )));
    }
    // [branch][n_φ][n_⊥]; Φ⊥ is the amplifier acting on a φ⊥ photon
    let (perp_seeded, _) = squeezed(-g, 1, c);
    let (perp_idler, _) = squeezed(g, 0, c);
    let amp: [Vec<Vec<f64>>; 2] = [
        (0..=c).map(|a| (0..=c).map(|b| seeded[a] * idler[b]).collect()).collect(),
        (0..=c).map(|a| (0..=c).map(|b| perp_idler[a] * perp_seeded[b]).collect()).collect(),
    ];
    let tr = transmit(cfg, &amp);
    let p = tr.p[0];
    if !(p > 0.0) {
        return Err(Error::Degenerate("no accepted outcomes".into()));
    }
    let tmax = 2 * c;
    let ident = {
        let mut s = [[Complex64::new(0.0, 0.0); 2]; 2];
        for o in 0..tr.blocks[0].len() {
            for t in 0..=tmax {
                for i in 0..2 {
                    for j in 0..2 {
                        s[i][j] += tr.blocks[i][o][t].dotc(&tr.blocks[j][o][t]);
                    }
                }
            }
        }
        s
    };
    let norm = singlet_pair(&ident, &ident).re;
    let spec = |theta: f64| ObservableSpec::new(cfg.kind, cfg.n_sigma, theta);
    let corr = |x: f64, y: f64| -> f64 {
        let ga = weighted(&class_grams(&tr, &spec(x), tmax));
        let gb = weighted(&class_grams(&tr, &spec(y), tmax));
        singlet_pair(&ga, &gb).re / norm
    };
    let a = cfg.angles;
    let (e_ab, e_abp, e_apb, e_apbp) = (corr(a.a, a.b), corr(a.a, a.b_prime), corr(a.a_prime, a.b), corr(a.a_prime, a.b_prime));
    let mut classes = Vec::new();
    for theta in cfg.class_angles() {
        for (e, gm) in class_grams(&tr, &spec(theta), tmax) {
            classes.push(ClassRow { theta, eigenvalue: e, probability: singlet_pair(&gm, &ident).re / norm });
        }
    }
    let three = ObservableSpec::new(ObservableKind::ThreeOutput, cfg.n_sigma, 0.0);
    let g0 = class_grams(&tr, &three, tmax);
    let mut per_mode = 0.0;
    let mut both = 0.0;
    for (ea, ga) in &g0 {
        if *ea == 0 {
            per_mode += singlet_pair(ga, &ident).re / norm;
        }
        for (eb, gb) in &g0 {
            if *ea != 0 && *eb != 0 {
                both += singlet_pair(ga, gb).re / norm;
            }
        }
    }
    let mut q = tr.q.clone();
    for (b, grid) in q.iter_mut().enumerate() {
        grid.scale(1.0 / tr.p[b]);
    }
    let [q_phi, q_perp] = q;
    Ok(OracleReport {
        p,
        e00: corr(0.0, 0.0),
        e_ab,
        e_abp,
        e_apb,
        e_apbp,
        bell: e_ab - e_abp + e_apb + e_apbp,
        loophole: 1.0 - both,
        loophole_per_mode: per_mode,
        classes,
        q_phi,
        q_perp,
        leakage,
    })
}

/// Which fast evaluation to compare against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    /// Reflection profiles with analytic rotation.
    Reduced,
    /// Explicit per-outcome rotation kernels.
    Kernel,
}

/// The same report from the fast path.
pub fn fast_report(cfg: &OracleConfig, route: Route) -> Result<OracleReport> {
    fast_report_cached(cfg, route, None)
}

/// [`fast_report`] with class weights going through a cache directory.
pub fn fast_report_cached(cfg: &OracleConfig, route: Route, cache: Option<&CacheDir>) -> Result<OracleReport> {
    check(cfg)?;
    // the full table: truncating it would break rotation covariance, which the reduced route relies on
    let table = gamma_table(GainParams::from_mean(cfg.m)?, 1e-30)?;
    let split = cfg.split()?;
    let model = ReducedModel::new(&table, cfg.r)?;
    let reduced = ReducedSource::new(&model, split.min_reflected()).with_cache(cache);
    let ens;
    let src: &dyn GramSource = match route {
        Route::Reduced => &reduced,
        Route::Kernel => {
            ens = branch_ensemble(&table, split)?;
            &ens
        }
    };
    let ctx = SingletContext::symmetric(src);
    let rep = bell_parameter(&ctx, cfg.angles, cfg.kind, cfg.n_sigma, cfg.k_th)?;
    let mut classes = Vec::new();
    for theta in cfg.class_angles() {
        let spec = ObservableSpec::new(cfg.kind, cfg.n_sigma, theta);
        let gram = src.gram(&spec)?;
        for (e, probability) in class_probabilities(&gram, &spec, &ctx)? {
            classes.push(ClassRow { theta, eigenvalue: e, probability });
        }
    }
    let q = |b: Branch| -> Result<Grid2> {
        let m = match route {
            Route::Reduced => preselected_q_binned(&model, b, split.min_reflected(), 1)?,
            Route::Kernel => preselected_q(&branch_ensemble(&table, split)?, b)?,
        };
        Ok(m.to_grid())
    };
    Ok(OracleReport {
        p: rep.p,
        e00: rep.e00,
        e_ab: rep.e_ab,
        e_abp: rep.e_abp,
        e_apb: rep.e_apb,
        e_apbp: rep.e_apbp,
        bell: rep.bell,
        loophole: rep.loophole,
        loophole_per_mode: rep.loophole_per_mode,
        classes,
        q_phi: q(Branch::Phi)?,
        q_perp: q(Branch::Perp)?,
        leakage: table.tail_mass,
    })
}

/// One field that differs by more than the tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub field: String,
    pub oracle: f64,
    pub fast: f64,
}

impl FieldDiff {
    pub fn abs_diff(&self) -> f64 {
        (self.oracle - self.fast).abs()
    }
}

/// Every compared field as `(name, oracle, fast)`.
pub fn fields(oracle: &OracleReport, fast: &OracleReport) -> Vec<FieldDiff> {
    let mut out = Vec::new();
    let mut push = |name: String, a: f64, b: f64| out.push(FieldDiff { field: name, oracle: a, fast: b });
    push("p".into(), oracle.p, fast.p);
    push("E00".into(), oracle.e00, fast.e00);
    push("E_ab".into(), oracle.e_ab, fast.e_ab);
    push("E_abp".into(), oracle.e_abp, fast.e_abp);
    push("E_apb".into(), oracle.e_apb, fast.e_apb);
    push("E_apbp".into(), oracle.e_apbp, fast.e_apbp);
    push("bell".into(), oracle.bell, fast.bell);
    push("loophole".into(), oracle.loophole, fast.loophole);
    push("loophole_per_mode".into(), oracle.loophole_per_mode, fast.loophole_per_mode);
    if oracle.classes.len() != fast.classes.len() {
        push("class_count".into(), oracle.classes.len() as f64, fast.classes.len() as f64);
    }
    for (a, b) in oracle.classes.iter().zip(&fast.classes) {
        let name = format!("P[theta={:.4},class={:+}]", a.theta, a.eigenvalue);
        let fb = if a.theta == b.theta && a.eigenvalue == b.eigenvalue { b.probability } else { f64::NAN };
        push(name, a.probability, fb);
    }
    for (label, qa, qb) in [("Q_phi", &oracle.q_phi, &fast.q_phi), ("Q_perp", &oracle.q_perp, &fast.q_perp)] {
        let rows = qa.rows.max(qb.rows);
        let cols = qa.cols.max(qb.cols);
        for u in 0..rows {
            for v in 0..cols {
                let (x, y) = (qa.get(u, v), qb.get(u, v));
                if x != 0.0 || y != 0.0 {
                    push(format!("{label}[{u},{v}]"), x, y);
                }
            }
        }
    }
    out
}

/// Fields whose absolute difference exceeds `tol` (NaN counts as a mismatch).
pub fn compare(oracle: &OracleReport, fast: &OracleReport, tol: f64) -> Vec<FieldDiff> {
    fields(oracle, fast).into_iter().filter(|d| !(d.abs_diff() <= tol)).collect()
}

/// Fixed suite of tiny configurations covering both reflectivities, thresholds
/// `0..=2`, partitions `0..=2` and both observables.
pub fn default_suite() -> Vec<OracleConfig> {
    let means = [0.001, 0.002, 0.003];
    let mut out = Vec::new();
    let mut i = 0usize;
    for &r in &[0.1, 0.2] {
        for k in 0..=2u64 {
            for ns in 0..=2u64 {
                let kind = ObservableKind::ALL[i % 2];
                let m = means[i % 3];
                out.push(OracleConfig::new(m, 12, r, k, ns, kind));
                i += 1;
            }
        }
    }
    out
}

/// Unamplified single photons: the analytic singlet.
pub fn micro_suite() -> Vec<OracleConfig> {
    let mut out = Vec::new();
    for kind in ObservableKind::ALL {
        // Ā needs Nσ = 1 to separate one photon from none
        let ns = if kind == ObservableKind::Binary { 1 } else { 0 };
        out.push(OracleConfig::new(0.0, 4, 1e-15, 0, ns, kind));
        out.push(OracleConfig::new(0.0, 4, 0.1, 1, ns, kind));
    }
    out
}

/// Aligned-correlation law of the single-photon singlet under the angle convention.
pub fn singlet_correlation(theta_a: f64, theta_b: f64) -> f64 {
    -(2.0 * (theta_b - theta_a)).cos()
}

/// `−2√2`
pub fn tsirelson() -> f64 {
    -2.0 * 2f64.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitter_column_is_binomial() {
        let col = splitter_column(3, 0.1);
        let want = [0.729f64, 0.243, 0.027, 0.001];
        for (x, w) in col.iter().zip(want) {
            assert!((x * x - w).abs() < 1e-14);
        }
    }

    #[test]
    fn single_photon_rotation() {
        let u = rotation(1, 0.3);
        assert!((u[(0, 0)] - Complex64::new(0.3f64.cos(), 0.0)).norm() < 1e-14);
        assert!((u[(1, 0)] - Complex64::new(0.0, 0.3f64.sin())).norm() < 1e-14);
    }

    #[test]
    fn rotation_unitary() {
        let u = rotation(12, 0.77);
        let id = &u * u.adjoint();
        for i in 0..13 {
            for j in 0..13 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn squeezed_matches_closed_form() {
        let t = gamma_table(GainParams::from_mean(0.01).unwrap(), 1e-30).unwrap();
        let g = t.params.g;
        let (s, _) = squeezed(g, 1, 9);
        let (v, _) = squeezed(-g, 0, 8);
        for i in 0..=4 {
            for j in 0..=4 {
                let want = t.gamma(i, j).to_f64();
                assert!((s[2 * i + 1] * v[2 * j] - want).abs() < 1e-14, "{i},{j}");
            }
        }
    }

    #[test]
    fn micro_singlet_is_analytic() {
        for cfg in micro_suite() {
            let r = dense_pipeline(&cfg).unwrap();
            if cfg.k_th == 0 {
                assert!((r.p - 1.0).abs() < 1e-12);
                assert!((r.bell - tsirelson()).abs() < 1e-12);
                assert!((r.e_ab - singlet_correlation(cfg.angles.a, cfg.angles.b)).abs() < 1e-12);
                if cfg.kind == ObservableKind::ThreeOutput {
                    assert!(r.loophole.abs() < 1e-12);
                }
            } else {
                assert!((r.p - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn refuses_leaky_cutoff() {
        let cfg = OracleConfig::new(0.25, 12, 0.2, 1, 0, ObservableKind::ThreeOutput);
        assert!(matches!(dense_pipeline(&cfg), Err(Error::Refused(_))));
        let big = OracleConfig { cutoff: 17, ..OracleConfig::new(0.001, 12, 0.2, 1, 0, ObservableKind::ThreeOutput) };
        assert!(matches!(dense_pipeline(&big), Err(Error::Refused(_))));
    }

    #[test]
    fn suite_point_matches_both_routes() {
        let cfg = default_suite()[10];
        let o = dense_pipeline(&cfg).unwrap();
        for route in [Route::Reduced, Route::Kernel] {
            let f = fast_report(&cfg, route).unwrap();
            let bad = compare(&o, &f, 1e-10);
            assert!(bad.is_empty(), "{route:?}: {bad:?}");
        }
    }

    #[test]
    fn mode_exchange_invariance() {
        // both modes share parameters, so swapping the angle roles leaves E unchanged
        let cfg = default_suite()[4];
        let o = dense_pipeline(&cfg).unwrap();
        let swapped = OracleConfig {
            angles: Angles { a: cfg.angles.b, a_prime: cfg.angles.b_prime, b: cfg.angles.a, b_prime: cfg.angles.a_prime },
            ..cfg
        };
        let s = dense_pipeline(&swapped).unwrap();
        assert!((o.e_ab - s.e_ab).abs() < 1e-12 && (o.e_apbp - s.e_apbp).abs() < 1e-12);
    }
}
