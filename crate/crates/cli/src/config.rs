//! Run configuration: `key = value` file merged with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use macrobell::belltest::Angles;
use macrobell::cache::{CacheDir, CACHE_ENV};
use macrobell::macrostate::GainParams;
use macrobell::measure::ObservableKind;
use macrobell::oracle::DEFAULT_LEAKAGE_LIMIT;
use serde::Serialize;

use crate::error::{Failure, Outcome};

/// Every key accepted in a config file; flags use the same names with dashes.
pub const KEYS: &[&str] = &[
    "gain",
    "mean",
    "reflectivity",
    "kth",
    "nsigma",
    "kind",
    "angles",
    "tail_eps",
    "sigma",
    "threads",
    "deterministic",
    "format",
    "cache_dir",
    "checkpoint",
    "out",
    "strict",
    "bin",
    "half_width",
    "theta_points",
    "theta_max",
    "m1000_grid",
    "suite",
    "cutoff",
    "leakage_limit",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Amplification {
    Gain(f64),
    Mean(f64),
}

impl Amplification {
    pub fn params(self) -> Outcome<GainParams> {
        Ok(match self {
            Amplification::Gain(g) => GainParams::from_gain(g)?,
            Amplification::Mean(m) => GainParams::from_mean(m)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Suite {
    Default,
    Micro,
    Custom,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    /// `None` only for commands that bring their own (oracle suites).
    pub amplification: Option<Amplification>,
    pub reflectivity: f64,
    pub kth: Vec<u64>,
    /// Empty means "choose": the correlate command scans for the best partition.
    pub nsigma: Vec<u64>,
    pub kinds: Vec<ObservableKind>,
    pub angles: Angles,
    pub tail_eps: f64,
    pub sigma: f64,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub format: Format,
    pub cache_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub strict: bool,
    /// `None` picks a bin width that keeps grids near 1024 cells per side.
    pub bin: Option<usize>,
    pub half_width: Option<u64>,
    pub theta_points: usize,
    pub theta_max: f64,
    pub m1000_grid: bool,
    pub suite: Suite,
    pub cutoff: usize,
    pub leakage_limit: f64,
}

/// Raw `key -> value` layer.
pub type Layer = BTreeMap<String, String>;

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_file_text(text: &str) -> Outcome<Layer> {
    let mut out = Layer::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("config line {}: expected key = value", no + 1)))?;
        let k = k.trim().replace('-', "_");
        if !KEYS.contains(&k.as_str()) {
            return Err(Failure::usage(format!("config line {}: unknown key '{k}'", no + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Failure::usage(format!("config line {}: '{k}' given twice", no + 1)));
        }
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Outcome<Layer> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_file_text(&text)
}

/// Overlay `flags` on `file`. Gain and mean share one slot, so either flag
/// replaces whichever of the two the file set.
pub fn merge(mut file: Layer, flags: Layer) -> Layer {
    if flags.contains_key("gain") || flags.contains_key("mean") {
        file.remove("gain");
        file.remove("mean");
    }
    file.extend(flags);
    file
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Outcome<T> {
    v.trim().parse().map_err(|_| Failure::usage(format!("{key}: cannot parse '{v}'")))
}

fn boolean(key: &str, v: &str) -> Outcome<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Failure::usage(format!("{key}: expected true or false, got '{v}'"))),
    }
}

/// `5`, `1600,1700` or `1600..1900:100` (inclusive, default step 1); pieces may be mixed.
pub fn parse_range(key: &str, v: &str) -> Outcome<Vec<u64>> {
    let mut out = Vec::new();
    for piece in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((lo, rest)) = piece.split_once("..") {
            let (hi, step) = match rest.split_once(':') {
                Some((h, s)) => (h, num::<u64>(key, s)?),
                None => (rest, 1),
            };
            let (lo, hi) = (num::<u64>(key, lo)?, num::<u64>(key, hi)?);
            if step == 0 || hi < lo {
                return Err(Failure::usage(format!("{key}: empty range '{piece}'")));
            }
            out.extend((lo..=hi).step_by(step as usize));
        } else {
            out.push(num(key, piece)?);
        }
    }
    if out.is_empty() {
        return Err(Failure::usage(format!("{key}: range is empty")));
    }
    Ok(out)
}

pub fn parse_kinds(v: &str) -> Outcome<Vec<ObservableKind>> {
    if v.trim().eq_ignore_ascii_case("both") || v.trim().eq_ignore_ascii_case("all") {
        return Ok(ObservableKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for s in v.split(',').filter(|s| !s.trim().is_empty()) {
        let k: ObservableKind = s.parse()?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(Failure::usage("kind: no observable given"));
    }
    Ok(out)
}

pub fn parse_angles(v: &str) -> Outcome<Angles> {
    let xs = v.split(',').map(|s| num::<f64>("angles", s)).collect::<Outcome<Vec<f64>>>()?;
    Ok(Angles::from_slice(&xs)?)
}

impl RunConfig {
    /// Build from the merged layer; `env_cache` is the cache-dir environment
    /// override, which beats the file but loses to an explicit flag.
    pub fn from_layers(file: Layer, flags: Layer, env_cache: Option<String>) -> Outcome<RunConfig> {
        let flag_cache = flags.contains_key("cache_dir");
        let mut l = merge(file, flags);
        if !flag_cache {
            if let Some(e) = env_cache.filter(|e| !e.is_empty()) {
                l.insert("cache_dir".into(), e);
            }
        }
        let get = |k: &str| l.get(k).map(String::as_str);

        let amplification = match (get("gain"), get("mean")) {
            (Some(_), Some(_)) => return Err(Failure::usage("set exactly one of gain and mean, not both")),
            (Some(g), None) => Some(Amplification::Gain(num("gain", g)?)),
            (None, Some(m)) => Some(Amplification::Mean(num("mean", m)?)),
            (None, None) => None,
        };
        let format = match get("format").unwrap_or("csv").to_ascii_lowercase().as_str() {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return Err(Failure::usage(format!("format: expected csv or json, got '{other}'"))),
        };
        let suite = match get("suite").unwrap_or("default").to_ascii_lowercase().as_str() {
            "default" => Suite::Default,
            "micro" => Suite::Micro,
            "custom" => Suite::Custom,
            other => return Err(Failure::usage(format!("suite: expected default, micro or custom, got '{other}'"))),
        };
        let cfg = RunConfig {
            amplification,
            reflectivity: get("reflectivity").map(|v| num("reflectivity", v)).transpose()?.unwrap_or(0.1),
            kth: get("kth").map(|v| parse_range("kth", v)).transpose()?.unwrap_or_default(),
            nsigma: get("nsigma").map(|v| parse_range("nsigma", v)).transpose()?.unwrap_or_default(),
            kinds: get("kind").map(parse_kinds).transpose()?.unwrap_or_else(|| ObservableKind::ALL.to_vec()),
            angles: get("angles").map(parse_angles).transpose()?.unwrap_or_default(),
            tail_eps: get("tail_eps").map(|v| num("tail_eps", v)).transpose()?.unwrap_or(1e-8),
            sigma: get("sigma").map(|v| num("sigma", v)).transpose()?.unwrap_or(2.0),
            threads: get("threads").map(|v| num("threads", v)).transpose()?,
            deterministic: get("deterministic").map(|v| boolean("deterministic", v)).transpose()?.unwrap_or(false),
            format,
            cache_dir: get("cache_dir").map(PathBuf::from),
            checkpoint: get("checkpoint").map(PathBuf::from),
            out: get("out").map(PathBuf::from),
            strict: get("strict").map(|v| boolean("strict", v)).transpose()?.unwrap_or(false),
            bin: get("bin").map(|v| num("bin", v)).transpose()?,
            half_width: get("half_width").map(|v| num("half_width", v)).transpose()?,
            theta_points: get("theta_points").map(|v| num("theta_points", v)).transpose()?.unwrap_or(73),
            theta_max: get("theta_max").map(|v| num("theta_max", v)).transpose()?.unwrap_or(std::f64::consts::PI),
            m1000_grid: get("m1000_grid").map(|v| boolean("m1000_grid", v)).transpose()?.unwrap_or(false),
            suite,
            cutoff: get("cutoff").map(|v| num("cutoff", v)).transpose()?.unwrap_or(12),
            leakage_limit: get("leakage_limit")
                .map(|v| num("leakage_limit", v))
                .transpose()?
                .unwrap_or(DEFAULT_LEAKAGE_LIMIT),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Environment value for the cache override.
    pub fn env_cache() -> Option<String> {
        std::env::var(CACHE_ENV).ok()
    }

    fn validate(&self) -> Outcome<()> {
        if !(self.reflectivity > 0.0 && self.reflectivity <= 0.5) {
            return Err(Failure::usage(format!("reflectivity must lie in (0, 0.5], got {}", self.reflectivity)));
        }
        if !(self.tail_eps > 0.0 && self.tail_eps < 1.0) {
            return Err(Failure::usage(format!("tail_eps must lie in (0, 1), got {}", self.tail_eps)));
        }
        if !(self.sigma > 0.0) {
            return Err(Failure::usage("sigma must be positive"));
        }
        if self.threads == Some(0) || self.bin == Some(0) {
            return Err(Failure::usage("threads and bin must be positive"));
        }
        if self.theta_points < 2 {
            return Err(Failure::usage("theta_points must be at least 2"));
        }
        Ok(())
    }

    pub fn cache(&self) -> Option<CacheDir> {
        self.cache_dir.as_ref().map(CacheDir::new)
    }

    pub fn gain(&self) -> Outcome<GainParams> {
        self.amplification
            .ok_or_else(|| Failure::usage("set one of gain or mean"))?
            .params()
    }

    pub fn single_kth(&self) -> Outcome<Option<u64>> {
        match self.kth.as_slice() {
            [] => Ok(None),
            [k] => Ok(Some(*k)),
            _ => Err(Failure::usage("this command takes a single kth")),
        }
    }

    /// Minimum accepted reflected count for threshold `k`.
    pub fn k_min(&self, k: u64) -> u64 {
        if self.strict {
            k + 1
        } else {
            k
        }
    }
}
