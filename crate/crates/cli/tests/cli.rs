use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_macrobell"));
    c.env_remove("MACROBELL_CACHE_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json_rows(o: &Output) -> Vec<Value> {
    let v: Value = serde_json::from_str(&stdout(o)).expect("json output");
    v["rows"].as_array().unwrap().clone()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn oracle_check_default_suite_passes() {
    let o = run(&["oracle-check", "--deterministic"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains(",PASS,")).count(), 36);
    assert!(!out.contains("FAIL"));
}

#[test]
fn oracle_check_micro_suite_is_analytic() {
    let o = run(&["oracle-check", "--suite", "micro"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn corrupted_cache_fails_with_field_diff() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = [
        "oracle-check", "--suite", "custom", "--mean", "0.002", "--kth", "1", "--nsigma", "1", "--kind", "A",
        "--cache-dir", p(&cache),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // warm cache still passes
    assert_eq!(code(&run(&args)), 0);

    let mut touched = 0;
    for e in fs::read_dir(&cache).unwrap() {
        let path = e.unwrap().path();
        if !path.file_name().unwrap().to_str().unwrap().starts_with("class-weights") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let (head, body) = text.split_once('\n').unwrap();
        let mut w: Value = serde_json::from_str(body).unwrap();
        let x = w["classes"][0][1][0].as_f64().unwrap();
        w["classes"][0][1][0] = Value::from(x * 1.5 + 1e-3);
        fs::write(&path, format!("{head}\n{}", serde_json::to_string(&w).unwrap())).unwrap();
        touched += 1;
    }
    assert!(touched > 0);
    let o = run(&args);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("FAIL"), "{err}");
    assert!(err.contains("oracle=") && err.contains("fast="), "{err}");
}

#[test]
fn oracle_check_refuses_large_states() {
    let o = run(&["oracle-check", "--suite", "custom", "--mean", "2", "--cutoff", "8"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("refused"));
}

#[test]
fn degenerate_angles_give_twice_aligned_correlation() {
    let o = run(&["bell", "--mean", "4", "--kth", "3", "--nsigma", "5", "--angles", "0,0,0,0", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for r in json_rows(&o) {
        let rep = &r["result"]["report"];
        let (b, e) = (rep["bell"].as_f64().unwrap(), rep["e00"].as_f64().unwrap());
        assert!((b - 2.0 * e).abs() < 1e-14, "{b} vs {e}");
    }
}

#[test]
fn micro_correlation_is_cosine() {
    let o = run(&[
        "correlate", "--mean", "0", "--reflectivity", "1e-15", "--kth", "0", "--nsigma", "0", "--kind", "A",
        "--format", "json",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = json_rows(&o);
    assert_eq!(rows.len(), 73);
    for r in rows {
        let t = r["theta_b"].as_f64().unwrap();
        let e = r["E"].as_f64().unwrap();
        assert!((e + (2.0 * t).cos()).abs() < 1e-10, "{t}: {e}");
    }
}

#[test]
fn correlate_csv_columns() {
    let o = run(&["correlate", "--mean", "2", "--kth", "1", "--nsigma", "3", "--theta-points", "5", "--deterministic"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("theta_b,kind,E"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn checkpoint_resume_and_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("run.jsonl");
    let base = ["bell", "--mean", "3", "--kth", "0..2", "--nsigma", "2,4", "--deterministic", "--checkpoint", p(&ck)];
    let first = run(&base);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(stdout(&first).lines().count(), 1 + 3 * 2 * 2);
    assert_eq!(fs::read_to_string(&ck).unwrap().lines().count(), 1 + 12);

    let again = run(&base);
    assert_eq!(code(&again), 0);
    assert!(stderr(&again).contains("12 points already done"));
    assert_eq!(stdout(&first), stdout(&again));

    // extending the grid keeps finished points and adds the new ones
    let mut wider = base.to_vec();
    wider[6] = "2,4,6";
    let o = run(&wider);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&ck).unwrap().lines().count(), 1 + 18);

    let mut other = base.to_vec();
    other.extend(["--reflectivity", "0.2"]);
    let o = run(&other);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("refusing to mix runs"));
}

#[test]
fn sweep_requires_checkpoint() {
    let o = run(&["sweep", "--mean", "3", "--kth", "1", "--nsigma", "2"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn cache_hits_match_cold_runs_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c");
    let args = ["bell", "--mean", "5", "--kth", "2", "--nsigma", "3,6", "--format", "json", "--deterministic"];
    let plain = run(&args);
    let mut cached = args.to_vec();
    cached.extend(["--cache-dir", p(&cache)]);
    let cold = run(&cached);
    let warm = run(&cached);
    assert!(fs::read_dir(&cache).unwrap().count() > 0);
    assert_eq!(stdout(&plain), stdout(&cold));
    assert_eq!(stdout(&cold), stdout(&warm));
    // the environment variable selects the same directory
    let env = bin().args(args).env("MACROBELL_CACHE_DIR", &cache).output().unwrap();
    assert_eq!(stdout(&env), stdout(&warm));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# small run\nmean = 3\nkth = 1\nnsigma = 2 # photons\nkind = A\ndeterministic = true\n").unwrap();
    let o = run(&["bell", "--config", p(&cfg), "--kth", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("2,2,A,"), "{}", rows[0]);

    let o = run(&["bell", "--config", p(&cfg), "--gain", "0.5"]);
    assert_eq!(code(&o), 0, "flag gain replaces file mean: {}", stderr(&o));

    fs::write(&cfg, "mean = 3\ncolour = red\n").unwrap();
    let o = run(&["bell", "--config", p(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown key"));
}

#[test]
fn usage_and_resource_exit_codes() {
    assert_eq!(code(&run(&["bell", "--gain", "1", "--mean", "2", "--kth", "1", "--nsigma", "1"])), 1);
    assert_eq!(code(&run(&["bell", "--mean", "2", "--kth", "1"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["preselect", "--mean", "2", "--kth", "1", "--reflectivity", "0.9"])), 1);
    assert_eq!(code(&run(&["preselect", "--mean", "1e9", "--kth", "1"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn qfunc_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["qfunc", "--mean", "4", "--kth", "5", "--out", p(d), "--deterministic"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mut names: Vec<String> =
        fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(
        names,
        [
            "q_preselected_perp.csv",
            "q_preselected_phi.csv",
            "q_raw_perp.csv",
            "q_raw_phi.csv",
            "q_smoothed_perp.csv",
            "q_smoothed_phi.csv",
            "summary.csv"
        ]
    );
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
    // parity comb: Φ has odd n_phi and even n_perp
    let raw = fs::read_to_string(a.join("q_raw_phi.csv")).unwrap();
    for line in raw.lines().skip(1) {
        let f: Vec<u64> = line.split(',').take(2).map(|x| x.parse().unwrap()).collect();
        assert!(f[0] % 2 == 1 && f[1] % 2 == 0, "{line}");
    }
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[4], "0", "raw overlap");
}

#[test]
fn timestamp_line_only_without_deterministic() {
    let args = ["preselect", "--mean", "2", "--kth", "1,2"];
    let o = run(&args);
    assert!(stdout(&o).starts_with("# macrobell"));
    let mut det = args.to_vec();
    det.push("--deterministic");
    let o = run(&det);
    assert!(stdout(&o).starts_with("kth,k_min,p_success"));
}

#[test]
fn m1000_grid_preset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1.csv");
    let o = run(&["bell", "--m1000-grid", "--deterministic", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kth,nsigma,kind,E00,E_ab,E_abp,E_apb,E_apbp,bell,loophole,p_success"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 64);
    assert_eq!(&rows[0][..3], ["1600", "8200", "A"]);
    assert_eq!(&rows[4][..3], ["1600", "8200", "Abar"]);
    assert_eq!(&rows[32][..3], ["900", "5200", "A"]);
    assert_eq!(&rows[63][..3], ["1200", "5800", "Abar"]);
    for r in &rows {
        assert_eq!(r.len(), 11);
    }
}

#[test]
fn mixture_mode_rows() {
    let o = run(&["bell", "--mean", "3", "--kth", "4", "--nsigma", "3", "--kind", "A", "--half-width", "2", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = json_rows(&o);
    let m = &rows[0]["result"]["mixture"];
    assert_eq!(m["k_lo"], 2);
    assert_eq!(m["k_hi"], 6);
    assert_eq!(m["per_k"].as_array().unwrap().len(), 5);
}
