//! `macrobell`: Q-functions, preselection, correlations and CHSH sweeps for
//! amplified photon-pair singlets.

mod checkpoint;
mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Layer, RunConfig};
use error::{Failure, Outcome};

#[derive(Parser)]
#[command(name = "macrobell", version, about = "Preselected macroscopic singlets: Q-functions, overlaps and Bell-CHSH tests")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write raw, smoothed and preselected Q grids plus an overlap summary to --out DIR
    Qfunc(Opts),
    /// Raw, smoothed and preselected overlaps
    Overlap(Opts),
    /// Success probability per threshold
    Preselect(Opts),
    /// E(0, theta_b) over a grid of theta_b for each observable
    Correlate(Opts),
    /// Bell parameter and loophole at each (kth, nsigma, kind) point
    Bell(Opts),
    /// Like bell, but a checkpoint is mandatory
    Sweep(Opts),
    /// Compare the fast path with the dense reference on tiny states
    OracleCheck(Opts),
}

/// Every option can also be set in the config file as `key = value`
/// (dashes become underscores); flags win over the file.
#[derive(Args, Clone, Default)]
struct Opts {
    /// key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Amplifier gain g
    #[arg(long)]
    gain: Option<String>,
    /// Mean photon number m = sinh²g (alternative to --gain)
    #[arg(long)]
    mean: Option<String>,
    /// Beamsplitter reflectivity R in (0, 0.5] [default: 0.1]
    #[arg(long)]
    reflectivity: Option<String>,
    /// Reflected-count threshold: 5, 1,2,3 or 1600..1900:100
    #[arg(long)]
    kth: Option<String>,
    /// Photon-count partition, same syntax as --kth
    #[arg(long)]
    nsigma: Option<String>,
    /// A, Abar or both [default: both]
    #[arg(long)]
    kind: Option<String>,
    /// a,a',b,b' in radians [default: 0,π/4,π/8,3π/8]
    #[arg(long, allow_hyphen_values = true)]
    angles: Option<String>,
    /// Truncation tail mass [default: 1e-8]
    #[arg(long)]
    tail_eps: Option<String>,
    /// Gaussian smoothing width in photons [default: 2]
    #[arg(long)]
    sigma: Option<String>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    threads: Option<String>,
    /// Drop the timestamp line so reruns give identical files
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<String>,
    /// csv or json [default: csv]
    #[arg(long)]
    format: Option<String>,
    /// Cache directory (also MACROBELL_CACHE_DIR)
    #[arg(long)]
    cache_dir: Option<String>,
    /// JSONL checkpoint for resumable runs
    #[arg(long)]
    checkpoint: Option<String>,
    /// Output file (directory for qfunc) [default: stdout]
    #[arg(long)]
    out: Option<String>,
    /// Accept k > kth instead of k >= kth
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    strict: Option<String>,
    /// Grid bin width in photons [default: about 1024 cells per side]
    #[arg(long)]
    bin: Option<String>,
    /// Mix thresholds kth-w..=kth+w with weights p²
    #[arg(long)]
    half_width: Option<String>,
    /// Number of theta_b grid points for correlate [default: 73]
    #[arg(long)]
    theta_points: Option<String>,
    /// Largest theta_b for correlate [default: π]
    #[arg(long)]
    theta_max: Option<String>,
    /// Preset: 2 blocks of 4 kth x 4 nsigma at m = 1000, both observables (64 rows)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    m1000_grid: Option<String>,
    /// oracle-check suite: default, micro or custom
    #[arg(long)]
    suite: Option<String>,
    /// Oracle photon cutoff per mode [default: 12]
    #[arg(long)]
    cutoff: Option<String>,
    /// Largest tolerated oracle truncation leakage [default: 1e-10]
    #[arg(long)]
    leakage_limit: Option<String>,
}

impl Opts {
    fn layer(&self) -> Layer {
        let pairs = [
            ("gain", &self.gain),
            ("mean", &self.mean),
            ("reflectivity", &self.reflectivity),
            ("kth", &self.kth),
            ("nsigma", &self.nsigma),
            ("kind", &self.kind),
            ("angles", &self.angles),
            ("tail_eps", &self.tail_eps),
            ("sigma", &self.sigma),
            ("threads", &self.threads),
            ("deterministic", &self.deterministic),
            ("format", &self.format),
            ("cache_dir", &self.cache_dir),
            ("checkpoint", &self.checkpoint),
            ("out", &self.out),
            ("strict", &self.strict),
            ("bin", &self.bin),
            ("half_width", &self.half_width),
            ("theta_points", &self.theta_points),
            ("theta_max", &self.theta_max),
            ("m1000_grid", &self.m1000_grid),
            ("suite", &self.suite),
            ("cutoff", &self.cutoff),
            ("leakage_limit", &self.leakage_limit),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect()
    }

    fn resolve(&self) -> Outcome<RunConfig> {
        let file = match &self.config {
            Some(p) => config::read_file(p)?,
            None => Layer::new(),
        };
        if self.gain.is_some() && self.mean.is_some() {
            return Err(Failure::usage("set exactly one of --gain and --mean"));
        }
        RunConfig::from_layers(file, self.layer(), RunConfig::env_cache())
    }
}

fn run(cmd: Cmd) -> Outcome<()> {
    let (opts, which) = match &cmd {
        Cmd::Qfunc(o) => (o, "qfunc"),
        Cmd::Overlap(o) => (o, "overlap"),
        Cmd::Preselect(o) => (o, "preselect"),
        Cmd::Correlate(o) => (o, "correlate"),
        Cmd::Bell(o) => (o, "bell"),
        Cmd::Sweep(o) => (o, "sweep"),
        Cmd::OracleCheck(o) => (o, "oracle-check"),
    };
    let cfg = opts.resolve()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    match which {
        "qfunc" => commands::qfunc(&cfg),
        "overlap" => commands::overlap(&cfg),
        "preselect" => commands::preselect(&cfg),
        "correlate" => commands::correlate(&cfg),
        "bell" => commands::bell(&cfg, false),
        "sweep" => commands::bell(&cfg, true),
        _ => commands::oracle_check(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit as u8)
        }
    }
}
