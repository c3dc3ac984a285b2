//! Command-line front end: `run`, `grid`, `verify` and `phases`.
//!
//! Settings are layered: built-in defaults, then a flat `key = value` file
//! given by `--config`, then `--set key=value` pairs, then dedicated flags.
//!
//! Exit codes: 0 success (or a run ending at the global minimum), 1 failed
//! verification, 2 invalid configuration or usage, 3 run ended at the
//! spurious minimum, 4 run ended undetermined.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::experiments::{
    success_grid, trajectory_experiment, write_grid_csv, write_json, write_trajectory_csv,
    TrajectoryDump,
};
use crate::model::{ExperimentConfig, InitScheme, StationaryClass, StepSizePolicy};
use crate::verify::{run_all, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SPURIOUS: i32 = 3;
pub const EXIT_UNDETERMINED: i32 = 4;

/// Default grid axes.
pub const TABLE_K: [usize; 6] = [25, 36, 49, 64, 81, 100];
pub const TABLE_RATIO: [f64; 6] = [0.0, 1.0, 4.0, 9.0, 16.0, 25.0];

#[derive(Debug, Parser)]
#[command(name = "convdyn", version, about = "Population gradient descent for a one-hidden-layer ReLU CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory and write its records.
    Run(CommonArgs),
    /// Success probability over a (k, ratio) grid from raw random draws.
    Grid(CommonArgs),
    /// Check closed forms against sampling and finite differences.
    Verify(VerifyArgs),
    /// Run one trajectory and report its phase structure.
    Phases(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Good,
    Bad,
    Raw,
}

impl From<InitArg> for InitScheme {
    fn from(x: InitArg) -> Self {
        match x {
            InitArg::Good => InitScheme::Good,
            InitArg::Bad => InitScheme::Bad,
            InitArg::Raw => InitScheme::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StepArg {
    Auto,
    Safe,
    Fixed,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    p: Option<String>,
    /// Width; a comma-separated list for `grid`.
    #[arg(long)]
    k: Option<String>,
    /// `(1ᵀa*)²/‖a*‖²`; a comma-separated list for `grid`.
    #[arg(long)]
    ratio: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long, env = "CONVDYN_SEED")]
    seed: Option<String>,
    /// Step-size rule.
    #[arg(long, value_enum)]
    step: Option<StepArg>,
    /// Fixed step size (implies `--step fixed`).
    #[arg(long)]
    eta: Option<String>,
    /// Multiplier for the `auto` and `safe` rules.
    #[arg(long = "eta-scale")]
    eta_scale: Option<String>,
    #[arg(long = "max-iters")]
    max_iters: Option<String>,
    #[arg(long = "grad-tol")]
    grad_tol: Option<String>,
    #[arg(long = "class-tol")]
    class_tol: Option<String>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[arg(long)]
    stride: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, env = "CONVDYN_SEED", default_value_t = 0)]
    seed: u64,
    /// Samples per identity check.
    #[arg(long = "n-samples", default_value_t = 1_000_000)]
    n_samples: usize,
    /// Samples per Monte-Carlo oracle configuration.
    #[arg(long = "oracle-samples", default_value_t = 100_000)]
    oracle_samples: usize,
    #[arg(long)]
    workers: Option<usize>,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Step-size settings collected before they can be turned into a policy.
#[derive(Debug, Default, Clone)]
struct StepSettings {
    rule: Option<StepArg>,
    eta: Option<f64>,
    scale: Option<f64>,
}

impl StepSettings {
    fn resolve(&self, base: StepSizePolicy) -> Result<StepSizePolicy> {
        let rule = self.rule.or(self.eta.map(|_| StepArg::Fixed));
        let base_scale = match base {
            StepSizePolicy::Auto { scale } | StepSizePolicy::Safe { scale } => scale,
            StepSizePolicy::Fixed { .. } => 0.5,
        };
        let scale = self.scale.unwrap_or(base_scale);
        Ok(match rule {
            None => match base {
                StepSizePolicy::Auto { .. } => StepSizePolicy::Auto { scale },
                StepSizePolicy::Safe { .. } => StepSizePolicy::Safe { scale },
                fixed => fixed,
            },
            Some(StepArg::Auto) => StepSizePolicy::Auto { scale },
            Some(StepArg::Safe) => StepSizePolicy::Safe { scale },
            Some(StepArg::Fixed) => match self.eta {
                Some(eta) => StepSizePolicy::Fixed { eta },
                None => return Err(Error::Config("a fixed step needs `eta`".into())),
            },
        })
    }
}

/// Everything a subcommand needs after layering.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub k_values: Vec<usize>,
    pub ratio_values: Vec<f64>,
}

struct Layered {
    cfg: ExperimentConfig,
    k_values: Option<Vec<usize>>,
    ratio_values: Option<Vec<f64>>,
    step: StepSettings,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("cannot parse `{other}` for `{key}`"))),
    }
}

/// Keys accepted in configuration files and `--set`.
pub const KEYS: [&str; 21] = [
    "p",
    "k",
    "ratio",
    "w_star_norm",
    "a_star_norm",
    "step",
    "eta",
    "eta_scale",
    "max_iters",
    "grad_tol",
    "class_tol",
    "trials",
    "seed",
    "init",
    "stride",
    "phase_cos",
    "phase_signal",
    "stop_when_classified",
    "resample_target",
    "monitor",
    "zero_sum_radius",
];

impl Layered {
    fn new(cfg: ExperimentConfig) -> Self {
        Self {
            cfg,
            k_values: None,
            ratio_values: None,
            step: StepSettings::default(),
        }
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.cfg;
        match key {
            "p" => c.p = parse(key, value)?,
            "k" => self.k_values = Some(parse_list(key, value)?),
            "ratio" => self.ratio_values = Some(parse_list(key, value)?),
            "w_star_norm" => c.w_star_norm = parse(key, value)?,
            "a_star_norm" => c.a_star_norm = parse(key, value)?,
            "step" => {
                self.step.rule = Some(
                    StepArg::from_str(value.trim(), false)
                        .map_err(|_| Error::Config(format!("unknown step rule `{value}`")))?,
                )
            }
            "eta" => self.step.eta = Some(parse(key, value)?),
            "eta_scale" => self.step.scale = Some(parse(key, value)?),
            "max_iters" => c.max_iters = parse(key, value)?,
            "grad_tol" => c.grad_tol = parse(key, value)?,
            "class_tol" => c.class_tol = parse(key, value)?,
            "trials" => c.trials = parse(key, value)?,
            "seed" => c.seed = parse(key, value)?,
            "init" => c.init = value.trim().parse()?,
            "stride" => c.stride = parse(key, value)?,
            "phase_cos" => c.phase_cos = parse(key, value)?,
            "phase_signal" => c.phase_signal = parse(key, value)?,
            "stop_when_classified" => c.stop_when_classified = parse_bool(key, value)?,
            "resample_target" => c.resample_target = parse_bool(key, value)?,
            "monitor" => c.monitor = parse_bool(key, value)?,
            "zero_sum_radius" => c.zero_sum_radius = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        self.apply(key.trim(), value)
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_pair(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }
}

fn resolve(args: &CommonArgs, base: ExperimentConfig) -> Result<Resolved> {
    let mut l = Layered::new(base.clone());
    if let Some(path) = &args.config {
        l.apply_file(path)?;
    }
    for pair in &args.overrides {
        l.apply_pair(pair)?;
    }
    let flags: [(&str, &Option<String>); 11] = [
        ("p", &args.p),
        ("k", &args.k),
        ("ratio", &args.ratio),
        ("trials", &args.trials),
        ("seed", &args.seed),
        ("eta", &args.eta),
        ("eta_scale", &args.eta_scale),
        ("max_iters", &args.max_iters),
        ("grad_tol", &args.grad_tol),
        ("class_tol", &args.class_tol),
        ("stride", &args.stride),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            l.apply(key, v)?;
        }
    }
    if let Some(rule) = args.step {
        l.step.rule = Some(rule);
    }
    if let Some(init) = args.init {
        l.cfg.init = init.into();
    }
    let mut cfg = l.cfg;
    cfg.step_size_policy = l.step.resolve(base.step_size_policy)?;
    let k_values = l.k_values.unwrap_or_else(|| vec![cfg.k]);
    let ratio_values = l.ratio_values.unwrap_or_else(|| vec![cfg.ratio]);
    cfg.k = k_values[0];
    cfg.ratio = ratio_values[0];
    Ok(Resolved {
        config: cfg,
        k_values,
        ratio_values,
    })
}

/// Resolved settings for a single-trajectory subcommand.
fn resolve_single(args: &CommonArgs) -> Result<ExperimentConfig> {
    let r = resolve(args, ExperimentConfig::default())?;
    if r.k_values.len() != 1 || r.ratio_values.len() != 1 {
        return Err(Error::Config("`k` and `ratio` take a single value here".into()));
    }
    r.config.validate()?;
    Ok(r.config)
}

fn with_workers<T>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T>
where
    T: Send,
{
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("workers must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_dump(args: &CommonArgs, dump: &TrajectoryDump) -> Result<()> {
    let mut out = open_out(&args.out)?;
    match args.format {
        Format::Csv => write_trajectory_csv(dump, &mut out)?,
        Format::Json => write_json(dump, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn class_code(class: StationaryClass) -> i32 {
    match class {
        StationaryClass::Global => EXIT_OK,
        StationaryClass::SpuriousLocal => EXIT_SPURIOUS,
        StationaryClass::Undetermined => EXIT_UNDETERMINED,
    }
}

fn cmd_run(args: &CommonArgs) -> Result<i32> {
    let cfg = resolve_single(args)?;
    let dump = trajectory_experiment(&cfg)?;
    write_dump(args, &dump)?;
    let last = dump.records.last().expect("a run records its final iterate");
    eprintln!(
        "class={} iters={} eta={:e} loss={:e} phi={:e} violations={}",
        dump.class,
        dump.iters_run,
        dump.eta,
        last.loss,
        last.phi,
        dump.violations.len()
    );
    Ok(class_code(dump.class))
}

fn cmd_grid(args: &CommonArgs) -> Result<i32> {
    let mut base = ExperimentConfig::grid_defaults();
    base.k = TABLE_K[0];
    let mut r = resolve(args, base)?;
    if args.k.is_none() && !has_key(args, "k")? {
        r.k_values = TABLE_K.to_vec();
    }
    if args.ratio.is_none() && !has_key(args, "ratio")? {
        r.ratio_values = TABLE_RATIO.to_vec();
    }
    for &k in &r.k_values {
        for &ratio in &r.ratio_values {
            if k == 0 || !(ratio >= 0.0) || ratio > k as f64 {
                return Err(Error::Config(format!(
                    "grid cell (k = {k}, ratio = {ratio}) needs 0 ≤ ratio ≤ k"
                )));
            }
        }
    }
    let mut cfg = r.config;
    cfg.k = *r.k_values.iter().max().expect("nonempty axis");
    cfg.ratio = 0.0;
    cfg.validate()?;
    let grid = with_workers(args.workers, || success_grid(&cfg, &r.k_values, &r.ratio_values))??;
    let mut out = open_out(&args.out)?;
    match args.format {
        Format::Csv => write_grid_csv(&grid, &mut out)?,
        Format::Json => write_json(&grid, &mut out)?,
    }
    out.flush()?;
    Ok(EXIT_OK)
}

/// Whether `key` was set by the config file or a `--set` pair.
fn has_key(args: &CommonArgs, key: &str) -> Result<bool> {
    let named = |pair: &str| pair.split_once('=').map(|(k, _)| k.trim() == key).unwrap_or(false);
    if args.overrides.iter().any(|p| named(p)) {
        return Ok(true);
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        return Ok(text.lines().any(|l| named(l.split('#').next().unwrap_or(""))));
    }
    Ok(false)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let opts = VerifyOptions {
        seed: args.seed,
        identity_samples: args.n_samples,
        oracle_samples: args.oracle_samples,
        ..VerifyOptions::default()
    };
    let report = with_workers(args.workers, || run_all(&opts))??;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for c in &report.checks {
        writeln!(out, "{c}")?;
    }
    let failed = report.failures().count();
    writeln!(out, "{} checks, {} failed", report.checks.len(), failed)?;
    if let Some(path) = &args.out {
        let mut f = BufWriter::new(File::create(path)?);
        write_json(&report, &mut f)?;
        f.flush()?;
    }
    if failed > 0 {
        for c in report.failures() {
            eprintln!("{c}");
        }
        return Ok(EXIT_VERIFY_FAILED);
    }
    Ok(EXIT_OK)
}

fn cmd_phases(args: &CommonArgs) -> Result<i32> {
    let cfg = resolve_single(args)?;
    let dump = trajectory_experiment(&cfg)?;
    if args.out.is_some() {
        write_dump(args, &dump)?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "class={} iters={} eta={:e}", dump.class, dump.iters_run, dump.eta)?;
    let Some(t1) = dump.phase1_end else {
        writeln!(out, "no phase transition")?;
        return Ok(EXIT_OK);
    };
    writeln!(out, "phase1_end={t1}")?;
    if let Some(rec) = dump.records.iter().find(|r| r.iter == t1) {
        let c = dump.teacher.w_star_norm();
        writeln!(
            out,
            "at_transition phi={:e} cos_phi={:e} signal={:e} sin2phi={:e} loss={:e}",
            rec.phi,
            rec.phi.cos(),
            rec.a_dot_astar * c / dump.teacher.loss_scale(),
            rec.sin2phi(),
            rec.loss
        )?;
    }
    match dump.phase_rates {
        Some(r) => writeln!(out, "rate_pre={:e} rate_post={:e} rate_ratio={:e}", r.pre, r.post, r.ratio())?,
        None => writeln!(out, "rates unavailable")?,
    }
    Ok(EXIT_OK)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Phases(a) => cmd_phases(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("convdyn: {e}");
            EXIT_INVALID
        }
    }
}
