use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use macrobell::belltest::BellReport;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Format, RunConfig};
use crate::error::Outcome;

pub const BELL_COLUMNS: &str = "kth,nsigma,kind,E00,E_ab,E_abp,E_apb,E_apbp,bell,loophole,p_success";

/// Six significant digits, fixed notation for moderate magnitudes.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..6).contains(&e) {
        format!("{:.*}", (5 - e) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

pub fn bell_row(r: &BellReport) -> String {
    let v = [r.e00, r.e_ab, r.e_abp, r.e_apb, r.e_apbp, r.bell, r.loophole, r.p];
    let nums: Vec<String> = v.iter().map(|&x| sig6(x)).collect();
    format!("{},{},{},{}", r.k_th, r.n_sigma, r.kind.label(), nums.join(","))
}

/// Leading comment line with a timestamp, dropped under the deterministic flag.
fn stamp(cfg: &RunConfig) -> Option<u64> {
    if cfg.deterministic {
        None
    } else {
        Some(SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
    }
}

/// A table as CSV or a JSON document `{rows: [...]}`.
pub struct Table<R> {
    pub header: String,
    pub csv_rows: Vec<String>,
    pub json_rows: Vec<R>,
    pub extra: Value,
}

impl<R: Serialize> Table<R> {
    pub fn new(header: &str) -> Self {
        Table { header: header.into(), csv_rows: Vec::new(), json_rows: Vec::new(), extra: Value::Null }
    }

    pub fn push(&mut self, csv: String, row: R) {
        self.csv_rows.push(csv);
        self.json_rows.push(row);
    }

    pub fn render(&self, cfg: &RunConfig) -> Outcome<String> {
        let mut s = String::new();
        match cfg.format {
            Format::Csv => {
                if let Some(t) = stamp(cfg) {
                    s.push_str(&format!("# macrobell {} generated {t}\n", env!("CARGO_PKG_VERSION")));
                }
                s.push_str(&self.header);
                s.push('\n');
                for r in &self.csv_rows {
                    s.push_str(r);
                    s.push('\n');
                }
            }
            Format::Json => {
                let mut doc = json!({ "version": env!("CARGO_PKG_VERSION"), "rows": self.json_rows });
                if let Some(t) = stamp(cfg) {
                    doc["generated"] = json!(t);
                }
                if !self.extra.is_null() {
                    doc["extra"] = self.extra.clone();
                }
                s = serde_json::to_string_pretty(&doc)?;
                s.push('\n');
            }
        }
        Ok(s)
    }

    /// To `cfg.out` if set, stdout otherwise.
    pub fn emit(&self, cfg: &RunConfig) -> Outcome<()> {
        let text = self.render(cfg)?;
        match &cfg.out {
            Some(p) => write_file(p, &text),
            None => {
                io::stdout().lock().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

pub fn write_file(path: &Path, text: &str) -> Outcome<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}
