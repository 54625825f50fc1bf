//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line (straight to
//! stderr, so it shows without `--nocapture`) and fails when its criterion does.

use std::f64::consts::{FRAC_PI_4, PI};
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use macrobell::belltest::{
    best_n_sigma, bell_parameter, mix, Angles, BellReport, GramSource, ReducedSource, SingletContext,
};
use macrobell::macrostate::{gamma_table, q_function, q_overlap, smoothed_overlap, Branch, GainParams, GammaTable};
use macrobell::measure::{class_probabilities, ObservableKind, ObservableSpec};
use macrobell::oracle::{compare, default_suite, dense_pipeline, fast_report, Route};
use macrobell::preselect::reduced::{preselected_overlap, ReducedModel};
use macrobell::preselect::{branch_ensemble, SplitParams};

use ObservableKind::{Binary, ThreeOutput};

fn verdict(id: &str, what: &str, pass: bool, started: Instant, detail: &str) {
    let line = format!(
        "{id} {what}: {} [{:.1}s] {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{id} {what}: {detail}");
}

struct Check {
    lines: Vec<String>,
    ok: bool,
}

impl Check {
    fn new() -> Self {
        Check { lines: Vec::new(), ok: true }
    }

    fn within(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        let pass = (got - want).abs() <= tol;
        self.ok &= pass;
        self.lines.push(format!("{name}={got:.6} (want {want}±{tol}{})", if pass { "" } else { " ✗" }));
    }

    fn range(&mut self, name: &str, got: f64, lo: f64, hi: f64) {
        let pass = got >= lo && got <= hi;
        self.ok &= pass;
        self.lines.push(format!("{name}={got:.6e} (want [{lo:e}, {hi:e}]{})", if pass { "" } else { " ✗" }));
    }

    fn holds(&mut self, name: &str, pass: bool, note: String) {
        self.ok &= pass;
        self.lines.push(format!("{name}: {note}{}", if pass { "" } else { " ✗" }));
    }

    fn detail(&self) -> String {
        self.lines.join("; ")
    }
}

fn model(m: f64, tail_eps: f64, r: f64) -> (GammaTable, ReducedModel) {
    let t = gamma_table(GainParams::from_mean(m).unwrap(), tail_eps).unwrap();
    let model = ReducedModel::new(&t, r).unwrap();
    (t, model)
}

/// The m = 1000, R = 0.1 state shared by criteria 5 to 8.
fn big() -> &'static (GammaTable, ReducedModel) {
    static BIG: OnceLock<(GammaTable, ReducedModel)> = OnceLock::new();
    BIG.get_or_init(|| model(1000.0, 1e-12, 0.1))
}

fn report(m: &ReducedModel, k: u64, ns: u64, kind: ObservableKind) -> BellReport {
    let src = ReducedSource::new(m, k);
    bell_parameter(&SingletContext::symmetric(&src), Angles::default(), kind, ns, k).unwrap()
}

#[test]
fn ac1_oracle_equivalence() {
    let t0 = Instant::now();
    let suite = default_suite();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for c in &suite {
        let o = dense_pipeline(c).unwrap();
        for route in [Route::Reduced, Route::Kernel] {
            let f = fast_report(c, route).unwrap();
            for d in macrobell::oracle::fields(&o, &f) {
                worst = worst.max(d.abs_diff());
            }
            for d in compare(&o, &f, 1e-10) {
                bad.push(format!("m={} K={} Nσ={} {} {route:?} {}", c.m, c.k_th, c.n_sigma, c.kind, d.field));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = suite.len() >= 12 && bad.is_empty() && secs < 60.0;
    verdict(
        "AC1",
        "oracle equivalence",
        pass,
        t0,
        &format!("{} configs x 2 routes, max |diff| {worst:.2e} (tol 1e-10), runtime < 60s; mismatches {bad:?}", suite.len()),
    );
}

#[test]
fn ac2_analytic_singlet() {
    let t0 = Instant::now();
    let (t, m) = model(0.0, 1e-15, 1e-15);
    let reduced = ReducedSource::new(&m, 0);
    let ens = branch_ensemble(&t, SplitParams::new(1e-15, 0).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for src in [&reduced as &dyn GramSource, &ens] {
        let ctx = SingletContext::symmetric(src);
        for i in 0..50 {
            let ta = (i % 7) as f64 * PI / 7.0 - 0.3;
            let tb = i as f64 * PI / 49.0;
            let e = ctx.correlation(ta, tb, ThreeOutput, 0).unwrap();
            worst = worst.max((e + (2.0 * (tb - ta)).cos()).abs());
        }
    }
    let ctx = SingletContext::symmetric(&reduced);
    let b = bell_parameter(&ctx, Angles::default(), ThreeOutput, 0, 0).unwrap().bell;
    let mut c = Check::new();
    c.holds("E grid", worst <= 1e-10, format!("50 points x 2 routes, max |E + cos2(θb−θa)| = {worst:.2e}"));
    c.within("B", b, -2.0 * 2f64.sqrt(), 1e-10);
    verdict("AC2", "analytic singlet", c.ok, t0, &c.detail());
}

#[test]
fn ac3_structural_invariants() {
    let t0 = Instant::now();
    let eps = 1e-12;
    let (t, m) = model(16.0, eps, 0.1);
    let mut c = Check::new();
    let norm = t.norm_sqr();
    c.holds("normalization", norm >= 1.0 - eps && norm <= 1.0 + 1e-12, format!("|γ|² = {norm:.15}"));

    let raw = q_overlap(&q_function(&t, Branch::Phi), &q_function(&t, Branch::Perp)).unwrap();
    c.holds("discrete overlap", raw == 0.0, format!("{raw:e}"));

    let mut worst_total = 0.0f64;
    let mut worst_prob = 0.0f64;
    for k in [20u64, 70] {
        let src = ReducedSource::new(&m, k);
        let ctx = SingletContext::symmetric(&src);
        let s = src.identity();
        let p = src.success_probability();
        for kind in ObservableKind::ALL {
            for ns in [0u64, 7, 40, 150, 300] {
                for theta in [0.0, 0.4, 1.3, 2.9] {
                    let spec = ObservableSpec::new(kind, ns, theta);
                    let g = src.gram(&spec).unwrap();
                    let tot = g.class_total();
                    for a in 0..2 {
                        for b in 0..2 {
                            worst_total = worst_total.max((tot[a][b] - s[a][b]).norm() / p);
                        }
                    }
                    let probs: f64 = class_probabilities(&g, &spec, &ctx).unwrap().values().sum();
                    worst_prob = worst_prob.max((probs - 1.0).abs());
                }
            }
        }
    }
    c.holds(
        "partition completeness",
        worst_total < 1e-10 && worst_prob < 1e-10,
        format!("Σ classes vs identity {worst_total:.1e}, Σ probabilities − 1 {worst_prob:.1e}"),
    );

    let src = ReducedSource::new(&m, 20);
    let ctx = SingletContext::symmetric(&src);
    let mut worst_period = 0.0f64;
    for kind in ObservableKind::ALL {
        for (ta, tb) in [(0.0, 0.3), (0.7, 2.1), (1.9, 0.2)] {
            let e = ctx.correlation(ta, tb, kind, 40).unwrap();
            let ea = ctx.correlation(ta + PI, tb, kind, 40).unwrap();
            let eb = ctx.correlation(ta, tb + PI, kind, 40).unwrap();
            worst_period = worst_period.max((e - ea).abs()).max((e - eb).abs());
        }
    }
    c.holds("π-periodicity", worst_period < 1e-12, format!("max shift {worst_period:.1e}"));

    let ps: Vec<f64> = (0..=160).map(|k| m.success_probability(k)).collect();
    let mono = ps.windows(2).all(|w| w[1] <= w[0]);
    c.holds("p monotone", mono, format!("p(0) = {:.3}, p(160) = {:.3e}", ps[0], ps[160]));
    verdict("AC3", "structural invariants (m = 16)", c.ok, t0, &c.detail());
}

/// First zero of `E(0, θ)` on `(0, π/2]`, by bisection after a scan.
fn zero_crossing(ctx: &SingletContext, kind: ObservableKind, ns: u64) -> Option<f64> {
    let e = |x: f64| ctx.correlation(0.0, x, kind, ns).unwrap();
    let n = 180;
    let mut prev = (0.0, e(0.0));
    for i in 1..=n {
        let x = PI / 2.0 * i as f64 / n as f64;
        let v = e(x);
        if prev.1 < 0.0 && v >= 0.0 {
            let (mut lo, mut hi) = (prev.0, x);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if e(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev = (x, v);
    }
    None
}

#[test]
fn ac4_m16_regime() {
    let t0 = Instant::now();
    let (_, m) = model(16.0, 1e-16, 0.1);
    let src = ReducedSource::new(&m, 70);
    let ctx = SingletContext::symmetric(&src);
    let candidates: Vec<u64> = (0..=120).map(|i| i * 10).collect();
    let mut c = Check::new();
    let mut aligned = Vec::new();
    for kind in ObservableKind::ALL {
        let (ns, e00) = best_n_sigma(&ctx, kind, &candidates).unwrap();
        aligned.push(e00);
        let grid: Vec<f64> = (0..180).map(|i| ctx.correlation(0.0, PI * i as f64 / 180.0, kind, ns).unwrap()).collect();
        let argmin = grid.iter().enumerate().fold(0, |b, (i, v)| if *v < grid[b] { i } else { b });
        c.holds(&format!("{kind} minimum"), argmin == 0, format!("Nσ={ns}, E(0,0)={e00:.6}, argmin θ index {argmin}"));
        match zero_crossing(&ctx, kind, ns) {
            Some(z) => c.within(&format!("{kind} zero crossing"), z, FRAC_PI_4, 0.05),
            None => c.holds(&format!("{kind} zero crossing"), false, "no sign change on (0, π/2]".into()),
        }
    }
    c.holds(
        "|E_A(0,0)| ≥ |E_Abar(0,0)|",
        aligned[0].abs() >= aligned[1].abs(),
        format!("{:.6} vs {:.6}", aligned[0], aligned[1]),
    );
    verdict("AC4", "m = 16 regime at K_th = 70", c.ok, t0, &c.detail());
}

#[test]
fn ac5_m1000_spot_checks() {
    let t0 = Instant::now();
    let (_, m) = big();
    let mut c = Check::new();
    let a = report(m, 1700, 8400, ThreeOutput);
    let abar = report(m, 1700, 8400, Binary);
    c.within("K1700/N8400 E_A(0,0)", a.e00, -0.997, 0.002);
    c.within("K1700/N8400 B_A", a.bell, -2.821, 0.01);
    c.within("K1700/N8400 B_Abar", abar.bell, -2.800, 0.01);
    c.within("K1700/N8400 L", a.loophole, 0.003, 0.002);
    let a = report(m, 1000, 5200, ThreeOutput);
    c.within("K1000/N5200 B_A", a.bell, -2.783, 0.01);
    c.within("K1000/N5200 L", a.loophole, 0.016, 0.004);
    let a = report(m, 1700, 6000, ThreeOutput);
    let abar = report(m, 1700, 6000, Binary);
    c.within("K1700/N6000 B_A", a.bell, -2.59, 0.02);
    c.within("K1700/N6000 B_Abar", abar.bell, -1.90, 0.03);
    verdict("AC5", "m = 1000 spot checks", c.ok, t0, &c.detail());
}

#[test]
fn ac6_overlaps() {
    let t0 = Instant::now();
    let (t, m) = big();
    let mut c = Check::new();
    // bin 16 photons; binning can only raise the overlap, and bins 64..8 agree to 1e-3
    let pre = preselected_overlap(m, 1700, 16).unwrap();
    c.range("preselected overlap (bin 16, upper bound)", pre, 4e-5, 1.6e-4);
    let smooth = smoothed_overlap(t, 2.0).unwrap();
    c.range("smoothed overlap σ=2", smooth, 0.03, 0.3);
    c.lines.push(format!("large-m limit of both: 2/π = {:.5}", 2.0 / PI));
    verdict("AC6", "overlap claims at m = 1000", c.ok, t0, &c.detail());
}

#[test]
fn ac7_success_probability() {
    let t0 = Instant::now();
    let (_, m) = big();
    let mut c = Check::new();
    c.range("p(K=1700)", m.success_probability(1700), 1.5e-3, 2.5e-3);
    verdict("AC7", "success probability", c.ok, t0, &c.detail());
}

#[test]
fn ac8_robustness_window() {
    let t0 = Instant::now();
    let (_, m) = big();
    let mut c = Check::new();
    let ks = [1400u64, 1700, 2000, 2400];
    let reports: Vec<BellReport> = ks.iter().map(|&k| report(m, k, 8400, ThreeOutput)).collect();
    for r in &reports {
        c.holds(&format!("K{}", r.k_th), r.bell.abs() > 2.0, format!("|B_A| = {:.4} (p = {:.3e})", r.bell.abs(), r.p));
    }
    let mx = mix(reports, 1700, 1400, 2400).unwrap();
    c.holds("p²-weighted mixture", mx.mixture.bell.abs() > 2.0, format!("|B_A| = {:.4}", mx.mixture.bell.abs()));
    verdict("AC8", "K_th robustness window at Nσ = 8400", c.ok, t0, &c.detail());
}
