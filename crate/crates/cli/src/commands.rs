use std::fs;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use trimlab::experiments::{
    default_epsilons, default_f_grid, default_omegas, run_mixing, ConvergenceReport, MixingConfig,
};
use trimlab::norming::NormingError;
use trimlab::processes::{
    default_level_grid, validate_example_conditions_on, PiecewiseMapSpec, StepObservable,
    DEFAULT_MAX_WINDOW_BITS, DEFAULT_WINDOW_BITS,
};
use trimlab::report;
use trimlab::{
    norming_table, run_counterexample, run_mean_convergence, run_truncation_check, CounterexampleConfig,
    EventFamily, ExperimentConfig, ExperimentError, ProcessSpec, RegVaryingTail, RunOptions,
    SlowlyVaryingSpec, TrimmingSchedule,
};

use crate::config::{parse_count, parse_counts, parse_lags, parse_reals, resolve};
use crate::output::{emit, RunOutput};
use crate::{CliError, Common};

/// Comma-separated list flag.
#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct List<T>(Vec<T>);

fn counts(s: &str) -> Result<List<u64>, String> {
    parse_counts(s).map(List)
}

fn reals(s: &str) -> Result<List<f64>, String> {
    parse_reals(s).map(List)
}

fn lags(s: &str) -> Result<List<u64>, String> {
    parse_lags(s).map(List)
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Config(_) | ExperimentError::Norming(NormingError::Schedule { .. }) => usage(e),
        other => CliError::Runtime(other.to_string()),
    }
}

fn options(common: &Common, cancel: Arc<AtomicBool>) -> RunOptions {
    RunOptions {
        workers: common.workers,
        cancel: Some(cancel),
    }
}

fn default_l() -> String {
    "const:1".into()
}

fn default_pow07() -> String {
    "pow:0.7".into()
}

fn build_tail(alpha: f64, l: &str, support_left: Option<f64>) -> Result<RegVaryingTail, CliError> {
    let l: SlowlyVaryingSpec = l.parse().map_err(usage)?;
    let s = match support_left {
        Some(s) => s,
        None => RegVaryingTail::admissible_support(alpha, &l).map_err(usage)?,
    };
    RegVaryingTail::with_support(alpha, l, s).map_err(usage)
}

fn build_schedule(s: &str) -> Result<TrimmingSchedule, CliError> {
    s.parse().map_err(usage)
}

/// `iid` and `luroth` processes of index `alpha`.
fn build_mixing_example(process: &str, alpha: f64, l: &str, support_left: Option<f64>) -> Result<ProcessSpec, CliError> {
    match process {
        "iid" => Ok(ProcessSpec::iid(build_tail(alpha, l, support_left)?)),
        "luroth" => {
            if l.parse::<SlowlyVaryingSpec>().map_err(usage)?.as_constant() != Some(1.0) {
                return Err(usage("the luroth process has L ≡ 1; drop --L"));
            }
            let p = ProcessSpec::luroth(alpha);
            p.validate().map_err(usage)?;
            Ok(p)
        }
        other => Err(usage(format!("unknown process `{other}` (expected iid or luroth)"))),
    }
}

fn status_pair(partial: bool, failure: Option<String>) -> (bool, Option<String>) {
    (partial, failure)
}

// ---------------------------------------------------------------- norming-table

#[derive(Args, Serialize)]
pub struct NormingArgs {
    #[arg(long)]
    alpha: Option<f64>,
    /// Slowly varying factor: const:c, log:β or pow:p:<inner>.
    #[arg(long = "L")]
    #[serde(rename = "L")]
    l: Option<String>,
    #[arg(long)]
    support_left: Option<f64>,
    /// pow:θ or explicit:n=b,...
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, value_parser = counts)]
    checkpoints: Option<List<u64>>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormingConfig {
    alpha: f64,
    #[serde(rename = "L", default = "default_l")]
    l: String,
    #[serde(default)]
    support_left: Option<f64>,
    #[serde(default = "default_pow07")]
    schedule: String,
    checkpoints: Vec<u64>,
}

pub fn cmd_norming_table(args: NormingArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg: NormingConfig = resolve("norming-table", args.common.config.as_deref(), &args)?;
    let tail = build_tail(cfg.alpha, &cfg.l, cfg.support_left)?;
    let schedule = build_schedule(&cfg.schedule)?;
    let table = norming_table(&tail, &schedule, &cfg.checkpoints).map_err(|e| match &e {
        NormingError::Rows(rows) if rows.iter().all(|r| matches!(r, NormingError::Schedule { .. })) => usage(e),
        NormingError::Schedule { .. } => usage(e),
        _ => CliError::Runtime(e.to_string()),
    })?;
    let run = RunOutput {
        files: vec![("report.csv", report::norming_csv(&table))],
        plot: report::norming_plot(&table),
        metrics: serde_json::to_value(&table).expect("json"),
        partial: false,
        failure: None,
    };
    emit("norming-table", &args.common, &cfg, None, started, run)
}

// ---------------------------------------------------------------- verify-mean

#[derive(Args, Serialize)]
pub struct VerifyMeanArgs {
    /// iid or luroth.
    #[arg(long)]
    process: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    l: Option<String>,
    #[arg(long)]
    support_left: Option<f64>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, value_parser = counts)]
    checkpoints: Option<List<u64>>,
    #[arg(long, value_parser = parse_count)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Deviation levels ε for P(|S/d − 1| > ε).
    #[arg(long, value_parser = reals)]
    epsilons: Option<List<f64>>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyMeanConfig {
    process: String,
    alpha: f64,
    #[serde(rename = "L", default = "default_l")]
    l: String,
    #[serde(default)]
    support_left: Option<f64>,
    #[serde(default = "default_pow07")]
    schedule: String,
    checkpoints: Vec<u64>,
    replicas: u64,
    seed: u64,
    #[serde(default = "default_epsilons")]
    epsilons: Vec<f64>,
}

fn convergence_metrics(r: &ConvergenceReport) -> serde_json::Value {
    serde_json::to_value(r).expect("json")
}

pub fn cmd_verify_mean(args: VerifyMeanArgs, cancel: Arc<AtomicBool>) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg: VerifyMeanConfig = resolve("verify-mean", args.common.config.as_deref(), &args)?;
    let exp = ExperimentConfig {
        process: build_mixing_example(&cfg.process, cfg.alpha, &cfg.l, cfg.support_left)?,
        schedule: build_schedule(&cfg.schedule)?,
        checkpoints: cfg.checkpoints.clone(),
        replicas: cfg.replicas,
        master_seed: cfg.seed,
        epsilon_grid: cfg.epsilons.clone(),
    };
    let r = run_mean_convergence(&exp, &options(&args.common, cancel)).map_err(experiment_error)?;
    let (partial, failure) = status_pair(r.status.partial, r.status.failure.clone());
    let run = RunOutput {
        files: vec![("report.csv", report::convergence_csv(&r))],
        plot: report::convergence_plot(&r),
        metrics: convergence_metrics(&r),
        partial,
        failure,
    };
    emit("verify-mean", &args.common, &cfg, Some(cfg.seed), started, run)
}

// ---------------------------------------------------------------- counterexample

#[derive(Args, Serialize)]
pub struct CounterexampleArgs {
    /// doubling-pareto (default), iid or luroth for contrast runs.
    #[arg(long)]
    process: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    l: Option<String>,
    #[arg(long)]
    window_bits: Option<u32>,
    #[arg(long)]
    max_window_bits: Option<u32>,
    #[arg(long, value_parser = parse_count)]
    n: Option<u64>,
    /// Fixed trimming count; overrides --schedule.
    #[arg(long, value_parser = parse_count)]
    b: Option<u64>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, value_parser = parse_count)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hill order statistics k (default ⌈M^0.6⌉).
    #[arg(long)]
    hill_k: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    bootstrap: Option<u64>,
    #[arg(long, value_parser = reals)]
    omegas: Option<List<f64>>,
    /// Replica counts M' for running means.
    #[arg(long, value_parser = counts)]
    running: Option<List<u64>>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

fn default_doubling() -> String {
    "doubling-pareto".into()
}
fn default_gamma() -> f64 {
    2.0
}
fn default_window() -> u32 {
    DEFAULT_WINDOW_BITS
}
fn default_max_window() -> u32 {
    DEFAULT_MAX_WINDOW_BITS
}
fn default_pow05() -> String {
    "pow:0.5".into()
}
fn default_bootstrap() -> u64 {
    trimlab::experiments::default_bootstrap()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CounterexampleCliConfig {
    #[serde(default = "default_doubling")]
    process: String,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(rename = "L", default = "default_l")]
    l: String,
    #[serde(default = "default_window")]
    window_bits: u32,
    #[serde(default = "default_max_window")]
    max_window_bits: u32,
    n: u64,
    #[serde(default)]
    b: Option<u64>,
    #[serde(default = "default_pow05")]
    schedule: String,
    replicas: u64,
    seed: u64,
    #[serde(default)]
    hill_k: Option<usize>,
    #[serde(default = "default_bootstrap")]
    bootstrap: u64,
    #[serde(default = "default_omegas")]
    omegas: Vec<f64>,
    #[serde(default)]
    running: Vec<u64>,
}

pub fn cmd_counterexample(args: CounterexampleArgs, cancel: Arc<AtomicBool>) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg: CounterexampleCliConfig = resolve("counterexample", args.common.config.as_deref(), &args)?;
    let process = match cfg.process.as_str() {
        "doubling-pareto" => {
            let p = ProcessSpec::DoublingPareto {
                gamma: cfg.gamma,
                window_bits: cfg.window_bits,
                max_window_bits: cfg.max_window_bits,
            };
            p.validate().map_err(usage)?;
            p
        }
        other => {
            let alpha = cfg.alpha.ok_or_else(|| usage("--alpha is required for iid and luroth"))?;
            build_mixing_example(other, alpha, &cfg.l, None)?
        }
    };
    let b = match cfg.b {
        Some(b) => b,
        None => build_schedule(&cfg.schedule)?.b(cfg.n).map_err(usage)?,
    };
    let ce = CounterexampleConfig {
        process,
        n: cfg.n,
        b,
        replicas: cfg.replicas,
        master_seed: cfg.seed,
        hill_k: cfg.hill_k,
        bootstrap: cfg.bootstrap,
        omega_grid: cfg.omegas.clone(),
        running_grid: cfg.running.clone(),
    };
    let r = run_counterexample(&ce, &options(&args.common, cancel)).map_err(experiment_error)?;
    let run = RunOutput {
        files: vec![
            ("report.csv", report::tail_report_csv(&r)),
            ("running_means.csv", report::running_means_csv(&r)),
            ("omega_check.csv", report::omega_csv(&r)),
        ],
        plot: report::tail_plot(&r),
        metrics: serde_json::to_value(&r).expect("json"),
        partial: r.status.partial,
        failure: r.status.failure.clone(),
    };
    emit("counterexample", &args.common, &cfg, Some(cfg.seed), started, run)
}

// ---------------------------------------------------------------- mixing

#[derive(Args, Serialize)]
pub struct MixingArgs {
    /// iid, luroth or doubling-pareto.
    #[arg(long)]
    process: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    l: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// a..b or a comma list.
    #[arg(long, value_parser = lags)]
    lags: Option<List<u64>>,
    #[arg(long, value_parser = reals)]
    thresholds: Option<List<f64>>,
    #[arg(long)]
    depth: Option<u8>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    anchor: Option<u64>,
    #[arg(long, value_parser = parse_count)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_lags() -> Vec<u64> {
    vec![1, 2, 3, 4]
}
fn default_depth() -> u8 {
    1
}
fn default_min_count() -> u64 {
    trimlab::mixing::DEFAULT_MIN_COUNT
}
fn default_mixing_replicas() -> u64 {
    100_000
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixingCliConfig {
    process: String,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(rename = "L", default = "default_l")]
    l: String,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_lags")]
    lags: Vec<u64>,
    #[serde(default)]
    thresholds: Option<Vec<f64>>,
    #[serde(default = "default_depth")]
    depth: u8,
    #[serde(default = "default_min_count")]
    min_count: u64,
    #[serde(default)]
    anchor: Option<u64>,
    #[serde(default = "default_mixing_replicas")]
    replicas: u64,
    seed: u64,
}

pub fn cmd_mixing(args: MixingArgs, cancel: Arc<AtomicBool>) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg: MixingCliConfig = resolve("mixing", args.common.config.as_deref(), &args)?;
    let process = match cfg.process.as_str() {
        "doubling-pareto" => {
            let p = ProcessSpec::doubling(cfg.gamma);
            p.validate().map_err(usage)?;
            p
        }
        other => build_mixing_example(other, cfg.alpha, &cfg.l, None)?,
    };
    if cfg.thresholds.is_none() {
        cfg.thresholds = Some(match process {
            ProcessSpec::DoublingPareto { .. } => vec![4.0, 16.0],
            _ => vec![2.0, 10.0, 100.0],
        });
    }
    cfg.anchor.get_or_insert(cfg.depth as u64);
    let family = EventFamily {
        thresholds: cfg.thresholds.clone().unwrap_or_default(),
        depth: cfg.depth,
        min_count: cfg.min_count,
    };
    family.validate().map_err(usage)?;
    let mc = MixingConfig {
        process,
        lags: cfg.lags.clone(),
        family,
        anchor: cfg.anchor.unwrap_or(1),
        replicas: cfg.replicas,
        master_seed: cfg.seed,
    };
    let r = run_mixing(&mc, &options(&args.common, cancel)).map_err(experiment_error)?;
    let run = RunOutput {
        files: vec![("report.csv", report::mixing_csv(&r))],
        plot: report::mixing_plot(&r),
        metrics: serde_json::to_value(&r).expect("json"),
        partial: r.status.partial,
        failure: r.status.failure.clone(),
    };
    emit("mixing", &args.common, &cfg, Some(cfg.seed), started, run)
}

// ---------------------------------------------------------------- truncation-check

#[derive(Args, Serialize)]
pub struct TruncationArgs {
    /// iid or luroth.
    #[arg(long)]
    process: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    l: Option<String>,
    #[arg(long)]
    support_left: Option<f64>,
    #[arg(long, value_parser = counts)]
    checkpoints: Option<List<u64>>,
    /// Truncation level f (default g_n).
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long, value_parser = parse_count)]
    replicas: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Levels f for the exact/asymptotic ratio table.
    #[arg(long, value_parser = reals)]
    f_grid: Option<List<f64>>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncationCliConfig {
    process: String,
    alpha: f64,
    #[serde(rename = "L", default = "default_l")]
    l: String,
    #[serde(default)]
    support_left: Option<f64>,
    checkpoints: Vec<u64>,
    #[serde(default)]
    f: Option<f64>,
    #[serde(default = "default_pow07")]
    schedule: String,
    replicas: u64,
    seed: u64,
    #[serde(default = "default_f_grid")]
    f_grid: Vec<f64>,
}

pub fn cmd_truncation_check(args: TruncationArgs, cancel: Arc<AtomicBool>) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg: TruncationCliConfig = resolve("truncation-check", args.common.config.as_deref(), &args)?;
    let exp = ExperimentConfig {
        process: build_mixing_example(&cfg.process, cfg.alpha, &cfg.l, cfg.support_left)?,
        schedule: build_schedule(&cfg.schedule)?,
        checkpoints: cfg.checkpoints.clone(),
        replicas: cfg.replicas,
        master_seed: cfg.seed,
        epsilon_grid: default_epsilons(),
    };
    let r = run_truncation_check(&exp, cfg.f, &cfg.f_grid, &options(&args.common, cancel))
        .map_err(experiment_error)?;
    let run = RunOutput {
        files: vec![
            ("report.csv", report::truncation_csv(&r)),
            ("asymptotic_ratio.csv", report::asymptotic_ratio_csv(&r)),
        ],
        plot: report::truncation_plot(&r),
        metrics: serde_json::to_value(&r).expect("json"),
        partial: r.status.partial,
        failure: r.status.failure.clone(),
    };
    emit("truncation-check", &args.common, &cfg, Some(cfg.seed), started, run)
}

// ---------------------------------------------------------------- validate-map

#[derive(Args, Serialize)]
pub struct ValidateMapArgs {
    /// Built-in map: luroth or doubling.
    #[arg(long)]
    map: Option<String>,
    /// JSON file with a piecewise affine map specification.
    #[arg(long)]
    #[serde(skip)]
    map_file: Option<PathBuf>,
    /// Observable n^{1/α} on the cell labelled n.
    #[arg(long)]
    alpha: Option<f64>,
    /// Explicit observable values, one per cell.
    #[arg(long, value_parser = reals)]
    values: Option<List<f64>>,
    #[arg(long)]
    k_bound: Option<f64>,
    /// Replace one branch slope, as label=slope.
    #[arg(long)]
    mutate_slope: Option<String>,
    #[arg(long, value_parser = reals)]
    levels: Option<List<f64>>,
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
}

fn default_map() -> String {
    "luroth".into()
}
fn default_k_bound() -> f64 {
    4.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateMapConfig {
    #[serde(default = "default_map")]
    map: String,
    #[serde(default)]
    map_spec: Option<PiecewiseMapSpec>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default = "default_k_bound")]
    k_bound: f64,
    #[serde(default)]
    mutate_slope: Option<String>,
    #[serde(default = "default_level_grid")]
    levels: Vec<f64>,
}

pub fn cmd_validate_map(args: ValidateMapArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let mut cfg: ValidateMapConfig = resolve("validate-map", args.common.config.as_deref(), &args)?;
    if let Some(path) = &args.map_file {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
        cfg.map_spec = Some(serde_json::from_str(&text).map_err(|e| usage(format!("bad map file: {e}")))?);
    }
    let mut map = match &cfg.map_spec {
        Some(m) => m.clone(),
        None => match cfg.map.as_str() {
            "luroth" => PiecewiseMapSpec::luroth(),
            "doubling" => PiecewiseMapSpec::doubling(),
            other => return Err(usage(format!("unknown map `{other}` (expected luroth or doubling)"))),
        },
    };
    if let Some(m) = &cfg.mutate_slope {
        let (label, slope) = m
            .split_once('=')
            .ok_or_else(|| usage(format!("--mutate-slope expects label=slope, got `{m}`")))?;
        let label = parse_count(label).map_err(usage)?;
        let slope: f64 = slope.parse().map_err(|_| usage(format!("bad slope `{slope}`")))?;
        if label == 0 {
            return Err(usage("cell labels start at 1"));
        }
        map = map.with_slope(label, slope);
    }
    let observable = match (&cfg.values, cfg.alpha) {
        (Some(v), _) => StepObservable::Explicit { values: v.clone() },
        (None, a) => {
            let alpha = a.unwrap_or(0.5);
            cfg.alpha = Some(alpha);
            StepObservable::PowerIndex { alpha }
        }
    };
    let r = validate_example_conditions_on(&map, &observable, cfg.k_bound, &cfg.levels).map_err(usage)?;
    let run = RunOutput {
        files: vec![("report.csv", report::conditions_csv(&r))],
        plot: Default::default(),
        metrics: json!({ "all_passed": r.all_passed(), "report": r }),
        partial: false,
        failure: None,
    };
    emit("validate-map", &args.common, &cfg, None, started, run)
}
