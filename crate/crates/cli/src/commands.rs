use std::path::Path;

use macrobell::belltest::{
    best_n_sigma, kth_window_mixture, sweep_point, Angles, ReducedSource, SingletContext, WeightSource,
};
use macrobell::cache::CacheDir;
use macrobell::macrostate::cache::gamma_table_cached;
use macrobell::macrostate::{q_function, q_overlap, smoothed_overlap, Branch, GammaTable, ModeQ};
use macrobell::measure::ObservableKind;
use macrobell::oracle::{
    compare, dense_pipeline, default_suite, fast_report_cached, micro_suite, singlet_correlation, tsirelson,
    FieldDiff, OracleConfig, Route,
};
use macrobell::preselect::cache::class_weights_cached;
use macrobell::preselect::reduced::{preselected_overlap, preselected_q_binned, ReducedModel};
use macrobell::preselect::SplitParams;
use macrobell::Error;
use serde::Serialize;
use serde_json::{json, Value};

use crate::checkpoint::{Checkpoint, Key, PointResult, Record};
use crate::config::{Amplification, Format, RunConfig, Suite};
use crate::error::{Failure, Outcome};
use crate::output::{bell_row, sig6, write_file, Table, BELL_COLUMNS};

/// Grids are binned to about this many cells per side unless `bin` is given.
const AUTO_CELLS: usize = 1024;

/// Oracle comparison tolerance on every report field.
pub const ORACLE_TOLERANCE: f64 = 1e-10;

/// Two blocks of thresholds × partitions at `m = 1000`, run for both observables.
pub const M1000_GRID: [([u64; 4], [u64; 4]); 2] =
    [([1600, 1700, 1800, 1900], [8200, 8400, 8600, 8800]), ([900, 1000, 1100, 1200], [5200, 5400, 5600, 5800])];

fn build(cfg: &RunConfig) -> Outcome<(GammaTable, ReducedModel)> {
    let cache = cfg.cache();
    let table = gamma_table_cached(cache.as_ref(), cfg.gain()?, cfg.tail_eps)?;
    let model = ReducedModel::new(&table, cfg.reflectivity)?;
    Ok((table, model))
}

/// Truncation must stay far below the accepted mass, or the preselected
/// state is visibly clipped.
fn warn_tail(cfg: &RunConfig, p: f64) {
    if p > 0.0 && cfg.tail_eps > 1e-4 * p {
        eprintln!(
            "warning: tail_eps {:e} is not small against the success probability {p:.3e}; \
             results may be clipped, lower --tail-eps",
            cfg.tail_eps
        );
    }
}

fn bin_for(cfg: &RunConfig, len: usize) -> usize {
    cfg.bin.unwrap_or_else(|| len.div_ceil(AUTO_CELLS).max(1))
}

#[derive(Serialize)]
struct OverlapRow {
    mean_photons: f64,
    tail_eps: f64,
    bin: usize,
    sigma: f64,
    raw_overlap: f64,
    smoothed_overlap: f64,
    kth: Option<u64>,
    preselected_overlap: Option<f64>,
    p_success: Option<f64>,
}

const OVERLAP_COLUMNS: &str =
    "mean_photons,tail_eps,bin,sigma,raw_overlap,smoothed_overlap,kth,preselected_overlap,p_success";

fn overlap_row(cfg: &RunConfig, table: &GammaTable, model: &ReducedModel, bin: usize) -> Outcome<OverlapRow> {
    let raw = q_overlap(&q_function(table, Branch::Phi), &q_function(table, Branch::Perp))?;
    let smoothed = smoothed_overlap(table, cfg.sigma)?;
    let kth = cfg.single_kth()?;
    let (pre, p) = match kth {
        Some(k) => {
            let km = cfg.k_min(k);
            warn_tail(cfg, model.success_probability(km));
            (Some(preselected_overlap(model, km, bin)?), Some(model.success_probability(km)))
        }
        None => (None, None),
    };
    Ok(OverlapRow {
        mean_photons: table.params.m,
        tail_eps: cfg.tail_eps,
        bin,
        sigma: cfg.sigma,
        raw_overlap: raw,
        smoothed_overlap: smoothed,
        kth,
        preselected_overlap: pre,
        p_success: p,
    })
}

fn overlap_csv(r: &OverlapRow) -> String {
    let opt = |x: Option<f64>| x.map(sig6).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{}",
        sig6(r.mean_photons),
        sig6(r.tail_eps),
        r.bin,
        sig6(r.sigma),
        sig6(r.raw_overlap),
        sig6(r.smoothed_overlap),
        r.kth.map(|k| k.to_string()).unwrap_or_default(),
        opt(r.preselected_overlap),
        opt(r.p_success)
    )
}

fn grid_len(table: &GammaTable) -> usize {
    table.seeded_marginal().len().max(table.idler_marginal().len())
}

fn write_grid(dir: &Path, name: &str, q: &ModeQ) -> Outcome<()> {
    let mut buf = Vec::new();
    q.write_csv(&mut buf)?;
    write_file(&dir.join(name), &String::from_utf8(buf).expect("csv is utf-8"))?;
    eprintln!("wrote {}", dir.join(name).display());
    Ok(())
}

/// Raw, smoothed and (with a threshold) preselected grids plus an overlap summary.
pub fn qfunc(cfg: &RunConfig) -> Outcome<()> {
    let dir = cfg.out.clone().ok_or_else(|| Failure::usage("qfunc writes several files; set --out to a directory"))?;
    let (table, model) = build(cfg)?;
    let bin = bin_for(cfg, grid_len(&table));
    for b in [Branch::Phi, Branch::Perp] {
        let tag = branch_tag(b);
        let raw = q_function(&table, b);
        write_grid(&dir, &format!("q_raw_{tag}.csv"), &raw.rebinned(bin)?)?;
        write_grid(&dir, &format!("q_smoothed_{tag}.csv"), &raw.smoothed(cfg.sigma)?.rebinned(bin)?)?;
        if let Some(k) = cfg.single_kth()? {
            let pre = preselected_q_binned(&model, b, cfg.k_min(k), bin)?;
            write_grid(&dir, &format!("q_preselected_{tag}.csv"), &pre)?;
        }
    }
    let row = overlap_row(cfg, &table, &model, bin)?;
    let mut t = Table::new(OVERLAP_COLUMNS);
    t.push(overlap_csv(&row), row);
    let name = match cfg.format {
        Format::Csv => "summary.csv",
        Format::Json => "summary.json",
    };
    write_file(&dir.join(name), &t.render(cfg)?)?;
    eprintln!("wrote {}", dir.join(name).display());
    Ok(())
}

fn branch_tag(b: Branch) -> &'static str {
    match b {
        Branch::Phi => "phi",
        Branch::Perp => "perp",
    }
}

pub fn overlap(cfg: &RunConfig) -> Outcome<()> {
    let (table, model) = build(cfg)?;
    let bin = bin_for(cfg, grid_len(&table));
    let row = overlap_row(cfg, &table, &model, bin)?;
    let mut t = Table::new(OVERLAP_COLUMNS);
    t.push(overlap_csv(&row), row);
    t.emit(cfg)
}

#[derive(Serialize)]
struct PreselectRow {
    kth: u64,
    k_min: u64,
    p_success: f64,
    p_joint: f64,
    n_th_estimate: f64,
}

pub fn preselect(cfg: &RunConfig) -> Outcome<()> {
    if cfg.kth.is_empty() {
        return Err(Failure::usage("preselect needs kth"));
    }
    let (_, model) = build(cfg)?;
    let mut t = Table::new("kth,k_min,p_success,p_joint,n_th_estimate");
    for &k in &cfg.kth {
        let km = cfg.k_min(k);
        let p = model.success_probability(km);
        warn_tail(cfg, p);
        let n_th = SplitParams::new(cfg.reflectivity, k)?.n_th_estimate();
        let row = PreselectRow { kth: k, k_min: km, p_success: p, p_joint: p * p, n_th_estimate: n_th };
        t.push(format!("{k},{km},{},{},{}", sig6(p), sig6(p * p), sig6(n_th)), row);
    }
    t.emit(cfg)
}

#[derive(Serialize)]
struct CorrelateRow {
    theta_b: f64,
    kind: ObservableKind,
    nsigma: u64,
    #[serde(rename = "E")]
    e: f64,
}

/// Partitions tried when none is configured: 41 points up to twice the
/// preselected photon scale.
fn scan_candidates(model: &ReducedModel, cfg: &RunConfig, k: u64) -> Outcome<Vec<u64>> {
    let n_th = SplitParams::new(cfg.reflectivity, k)?.n_th_estimate();
    let hi = (2.0 * (4.0 * model.params.m + n_th)).ceil().max(2.0) as u64;
    let mut c: Vec<u64> = (0..=40).map(|i| i * hi / 40).collect();
    c.dedup();
    Ok(c)
}

/// `E(0, θ_b)` on a grid of `θ_b` for each observable.
pub fn correlate(cfg: &RunConfig) -> Outcome<()> {
    let k = cfg.single_kth()?.unwrap_or(0);
    let km = cfg.k_min(k);
    let (_, model) = build(cfg)?;
    warn_tail(cfg, model.success_probability(km));
    let cache = cfg.cache();
    let mut t = Table::new("theta_b,kind,E");
    let mut chosen = serde_json::Map::new();
    for &kind in &cfg.kinds {
        let ns = match cfg.nsigma.as_slice() {
            [ns] => *ns,
            [] => {
                let src = ReducedSource::new(&model, km).with_cache(cache.as_ref());
                let ctx = SingletContext::symmetric(&src);
                let (ns, e) = best_n_sigma(&ctx, kind, &scan_candidates(&model, cfg, k)?)?;
                eprintln!("{kind}: scanned partitions, strongest anticorrelation E(0,0) = {e:.6} at nsigma = {ns}");
                ns
            }
            _ => return Err(Failure::usage("correlate takes a single nsigma (or none to scan)")),
        };
        chosen.insert(kind.label().into(), json!(ns));
        let src = WeightSource(class_weights_cached(cache.as_ref(), &model, kind, ns, km)?);
        let ctx = SingletContext::symmetric(&src);
        for i in 0..cfg.theta_points {
            let theta = cfg.theta_max * i as f64 / (cfg.theta_points - 1) as f64;
            let e = ctx.correlation(0.0, theta, kind, ns)?;
            t.push(format!("{},{},{}", sig6(theta), kind.label(), sig6(e)), CorrelateRow { theta_b: theta, kind, nsigma: ns, e });
        }
    }
    t.extra = json!({ "kth": k, "nsigma": chosen });
    t.emit(cfg)
}

/// Points of a bell run in output order.
pub fn bell_points(cfg: &RunConfig) -> Outcome<Vec<Key>> {
    let mut out = Vec::new();
    if cfg.m1000_grid {
        for (ks, ns) in M1000_GRID {
            for k in ks {
                for kind in ObservableKind::ALL {
                    for n in ns {
                        out.push((k, n, kind));
                    }
                }
            }
        }
        return Ok(out);
    }
    if cfg.kth.is_empty() || cfg.nsigma.is_empty() {
        return Err(Failure::usage("bell needs kth and nsigma (or the m1000_grid preset)"));
    }
    for &k in &cfg.kth {
        for &n in &cfg.nsigma {
            for &kind in &cfg.kinds {
                out.push((k, n, kind));
            }
        }
    }
    Ok(out)
}

/// Everything that changes a point's numbers; the checkpoint hash covers it.
pub fn run_params(cfg: &RunConfig) -> Value {
    json!({
        "amplification": cfg.amplification,
        "reflectivity": cfg.reflectivity,
        "tail_eps": cfg.tail_eps,
        "strict": cfg.strict,
        "angles": cfg.angles,
        "half_width": cfg.half_width,
    })
}

fn compute_point(cfg: &RunConfig, model: &ReducedModel, cache: Option<&CacheDir>, (k, n, kind): Key) -> PointResult {
    let angles: Angles = cfg.angles;
    match cfg.half_width {
        Some(w) => match kth_window_mixture(model, k, w, n, kind, angles, cfg.strict, cache) {
            Ok(m) => PointResult::Mixture(m),
            Err(e) => PointResult::Failed(e.to_string()),
        },
        None => match sweep_point(model, k, n, kind, angles, cfg.strict, cache) {
            Ok(r) => PointResult::Report(r),
            Err(e) => PointResult::Failed(e),
        },
    }
}

/// Bell reports over the configured points, resuming from the checkpoint.
pub fn bell(cfg: &RunConfig, need_checkpoint: bool) -> Outcome<()> {
    let mut cfg = cfg.clone();
    if cfg.m1000_grid && cfg.amplification.is_none() {
        cfg.amplification = Some(Amplification::Mean(1000.0));
    }
    let cfg = &cfg;
    let points = bell_points(cfg)?;
    let params = run_params(cfg);
    let mut ck = match &cfg.checkpoint {
        Some(p) => Checkpoint::open(p, &params)?,
        None if need_checkpoint => return Err(Failure::usage("sweep needs --checkpoint")),
        None => Checkpoint::none(),
    };
    if ck.len() > 0 {
        let at = ck.path().map(|p| p.display().to_string()).unwrap_or_default();
        eprintln!("resuming from {at}: {} points already done", ck.len());
    }
    let cache = cfg.cache();
    let mut model: Option<ReducedModel> = None;
    let mut t = Table::new(BELL_COLUMNS);
    let total = points.len();
    for (i, key) in points.into_iter().enumerate() {
        let rec = match ck.get(&key) {
            Some(r) => r.clone(),
            None => {
                if model.is_none() {
                    model = Some(build(cfg)?.1);
                }
                let m = model.as_ref().expect("model was just built");
                warn_tail(cfg, m.success_probability(cfg.k_min(key.0)));
                let result = compute_point(cfg, m, cache.as_ref(), key);
                let rec = Record { kth: key.0, nsigma: key.1, kind: key.2, result };
                ck.record(rec.clone())?;
                eprintln!("[{}/{total}] kth={} nsigma={} {}", i + 1, key.0, key.1, key.2);
                rec
            }
        };
        match &rec.result {
            PointResult::Report(r) => t.push(bell_row(r), rec.clone()),
            PointResult::Mixture(m) => t.push(bell_row(&m.mixture), rec.clone()),
            PointResult::Failed(msg) => {
                eprintln!("warning: kth={} nsigma={} {} failed: {msg}", rec.kth, rec.nsigma, rec.kind);
                t.json_rows.push(rec.clone());
            }
        }
    }
    t.emit(cfg)
}

#[derive(Serialize)]
struct OracleRow {
    m: f64,
    cutoff: usize,
    r: f64,
    kth: u64,
    nsigma: u64,
    kind: ObservableKind,
    route: String,
    pass: bool,
    max_diff: f64,
    diffs: Vec<FieldDiff>,
}

fn oracle_configs(cfg: &RunConfig) -> Outcome<Vec<OracleConfig>> {
    Ok(match cfg.suite {
        Suite::Default => default_suite(),
        Suite::Micro => micro_suite(),
        Suite::Custom => {
            let m = cfg.gain()?.m;
            let ks = if cfg.kth.is_empty() { vec![0] } else { cfg.kth.clone() };
            let ns = if cfg.nsigma.is_empty() { vec![0] } else { cfg.nsigma.clone() };
            let mut out = Vec::new();
            for &k in &ks {
                for &n in &ns {
                    for &kind in &cfg.kinds {
                        let mut c = OracleConfig::new(m, cfg.cutoff, cfg.reflectivity, k, n, kind);
                        c.strict = cfg.strict;
                        c.angles = cfg.angles;
                        c.leakage_limit = cfg.leakage_limit;
                        out.push(c);
                    }
                }
            }
            out
        }
    })
}

/// Unamplified single photons with nothing diverted: the textbook singlet.
fn analytic_diffs(c: &OracleConfig, rep: &macrobell::oracle::OracleReport) -> Vec<FieldDiff> {
    if !(c.m == 0.0 && c.k_th == 0 && c.r < 1e-9) {
        return Vec::new();
    }
    let a = c.angles;
    let want = [
        ("analytic.E00", singlet_correlation(0.0, 0.0), rep.e00),
        ("analytic.E_ab", singlet_correlation(a.a, a.b), rep.e_ab),
        ("analytic.E_apbp", singlet_correlation(a.a_prime, a.b_prime), rep.e_apbp),
        ("analytic.bell", if a == Angles::default() { tsirelson() } else { rep.bell }, rep.bell),
    ];
    want.iter()
        .map(|&(f, o, x)| FieldDiff { field: f.into(), oracle: o, fast: x })
        .filter(|d| !(d.abs_diff() <= ORACLE_TOLERANCE))
        .collect()
}

/// Dense reference against both fast routes; exit 3 on any mismatch.
pub fn oracle_check(cfg: &RunConfig) -> Outcome<()> {
    let configs = oracle_configs(cfg)?;
    let cache = cfg.cache();
    let mut t = Table::new("m,cutoff,r,kth,nsigma,kind,route,status,max_diff");
    let mut failed = 0usize;
    let mut runs = 0usize;
    for c in &configs {
        let oracle = dense_pipeline(c).map_err(|e| match e {
            Error::Refused(msg) => Failure::usage(format!("oracle refused: {msg}")),
            other => other.into(),
        })?;
        for route in [Route::Reduced, Route::Kernel] {
            let fast = fast_report_cached(c, route, cache.as_ref())?;
            let mut diffs = compare(&oracle, &fast, ORACLE_TOLERANCE);
            diffs.extend(analytic_diffs(c, &fast));
            let max_diff = macrobell::oracle::fields(&oracle, &fast)
                .iter()
                .map(FieldDiff::abs_diff)
                .fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
            let pass = diffs.is_empty();
            let route = format!("{route:?}").to_lowercase();
            runs += 1;
            if !pass {
                failed += 1;
                eprintln!(
                    "FAIL m={} cutoff={} R={} K={} Nσ={} {} {route}:",
                    c.m, c.cutoff, c.r, c.k_th, c.n_sigma, c.kind
                );
                for d in &diffs {
                    eprintln!("  {:<24} oracle={:.15e} fast={:.15e} |diff|={:.3e}", d.field, d.oracle, d.fast, d.abs_diff());
                }
            }
            let csv = format!(
                "{},{},{},{},{},{},{route},{},{:.3e}",
                c.m,
                c.cutoff,
                c.r,
                c.k_th,
                c.n_sigma,
                c.kind.label(),
                if pass { "PASS" } else { "FAIL" },
                max_diff
            );
            let row = OracleRow {
                m: c.m,
                cutoff: c.cutoff,
                r: c.r,
                kth: c.k_th,
                nsigma: c.n_sigma,
                kind: c.kind,
                route,
                pass,
                max_diff,
                diffs,
            };
            t.push(csv, row);
        }
    }
    t.emit(cfg)?;
    if failed > 0 {
        return Err(Failure::verification(format!(
            "{failed} of {runs} comparisons differ from the oracle by more than {ORACLE_TOLERANCE:e}"
        )));
    }
    eprintln!("all {runs} comparisons within {ORACLE_TOLERANCE:e}");
    Ok(())
}
