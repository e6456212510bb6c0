//! Replicated Monte Carlo runs.
//!
//! Replica `i` draws from the stream `(master_seed, i)` and replicas run in
//! fixed-size batches on a rayon pool. Results are collected in replica order
//! and reduced sequentially, so reports do not depend on the worker count.
//! A cancel flag is polled between batches; completed batches are kept and
//! the report is marked partial.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixing::{EventFamily, MixingError, PsiCounter, PsiEstimate};
use crate::norming::{d_norming, g_threshold, NormingError, TrimmingSchedule};
use crate::numeric::{mean_and_se, CompensatedSum};
use crate::processes::{LurothTail, ProcessError, ProcessSpec};
use crate::regvar::{RegVarError, RegVaryingTail, TailLaw};
use crate::rng::{open_unit, SeedRecord, AUX_STREAM};
use crate::trimming::{run_plan_stream, Checkpoint, CheckpointPlan, TrimError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replica {replica}: {source}")]
    Replica { replica: u64, source: Box<ExperimentError> },
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Trim(#[from] TrimError),
    #[error(transparent)]
    Norming(#[from] NormingError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Tail(#[from] RegVarError),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, ExperimentError> {
    Err(ExperimentError::Config(msg.into()))
}

pub const BATCH_SIZE: u64 = 256;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the rayon default.
    pub workers: Option<usize>,
    pub cancel: Option<Arc<AtomicBool>>,
}

impl RunOptions {
    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers: Some(workers),
            cancel: None,
        }
    }

    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, ExperimentError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            if w == 0 {
                return config_err("workers must be ≥ 1");
            }
            b = b.num_threads(w);
        }
        b.build().map_err(|e| ExperimentError::Config(format!("thread pool: {e}")))
    }
}

/// Completed replicas in index order.
#[derive(Debug)]
struct Outcome<T> {
    results: Vec<T>,
    interrupted: bool,
    failure: Option<ExperimentError>,
}

fn run_replicas<T, F>(m: u64, opts: &RunOptions, f: F) -> Result<Outcome<T>, ExperimentError>
where
    T: Send,
    F: Fn(u64) -> Result<T, ExperimentError> + Sync,
{
    let pool = opts.pool()?;
    let mut results = Vec::with_capacity(m as usize);
    let mut start = 0;
    while start < m {
        if opts.cancelled() {
            return Ok(Outcome {
                results,
                interrupted: true,
                failure: None,
            });
        }
        let end = (start + BATCH_SIZE).min(m);
        let batch: Vec<Result<T, ExperimentError>> =
            pool.install(|| (start..end).into_par_iter().map(&f).collect());
        for (offset, r) in batch.into_iter().enumerate() {
            match r {
                Ok(v) => results.push(v),
                Err(e) => {
                    return Ok(Outcome {
                        results,
                        interrupted: false,
                        failure: Some(ExperimentError::Replica {
                            replica: start + offset as u64,
                            source: Box::new(e),
                        }),
                    })
                }
            }
        }
        start = end;
    }
    Ok(Outcome {
        results,
        interrupted: false,
        failure: None,
    })
}

/// Completion status shared by all reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStatus {
    pub replicas_requested: u64,
    pub replicas_completed: u64,
    pub partial: bool,
    pub failure: Option<String>,
}

impl RunStatus {
    fn from_outcome<T>(requested: u64, o: &Outcome<T>) -> Self {
        Self {
            replicas_requested: requested,
            replicas_completed: o.results.len() as u64,
            partial: o.interrupted || o.failure.is_some(),
            failure: o.failure.as_ref().map(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub process: ProcessSpec,
    pub schedule: TrimmingSchedule,
    pub checkpoints: Vec<u64>,
    pub replicas: u64,
    pub master_seed: u64,
    #[serde(default = "default_epsilons")]
    pub epsilon_grid: Vec<f64>,
}

pub fn default_epsilons() -> Vec<f64> {
    vec![0.05, 0.1, 0.25, 0.5]
}

impl ExperimentConfig {
    fn validate(&self, min_replicas: u64) -> Result<(), ExperimentError> {
        self.process.validate()?;
        if self.replicas < min_replicas {
            return config_err(format!("replicas must be ≥ {min_replicas}, got {}", self.replicas));
        }
        if self.checkpoints.is_empty() {
            return config_err("no checkpoints");
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return config_err("checkpoints must be strictly increasing");
        }
        if self.epsilon_grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return config_err("epsilon grid must lie in (0, 1]");
        }
        if self.epsilon_grid.windows(2).any(|w| w[0] >= w[1]) {
            return config_err("epsilon grid must be strictly increasing");
        }
        Ok(())
    }

    /// Norming tail and exact marginal for the ψ-mixing examples.
    fn known_tail(&self) -> Result<(RegVaryingTail, Box<dyn TailLaw>), ExperimentError> {
        match &self.process {
            ProcessSpec::IidRegVarying { .. } | ProcessSpec::LurothStep { .. } => Ok((
                self.process.norming_tail().expect("known norming tail"),
                self.process.marginal().expect("known marginal"),
            )),
            other => config_err(format!(
                "process `{}` has no exactly known ψ-mixing marginal; use iid or luroth",
                other.short_name()
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationProb {
    pub epsilon: f64,
    pub prob: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub b: u64,
    pub d: f64,
    pub mean_abs_error: f64,
    pub mean_abs_error_se: Option<f64>,
    pub mean_ratio: f64,
    pub mean_ratio_se: Option<f64>,
    pub dev_prob: Vec<DeviationProb>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub process: String,
    pub rows: Vec<ConvergenceRow>,
    pub status: RunStatus,
}

impl ConvergenceReport {
    pub fn row(&self, n: u64) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn dev_prob(&self, n: u64, epsilon: f64) -> Option<f64> {
        self.row(n)?
            .dev_prob
            .iter()
            .find(|d| d.epsilon == epsilon)
            .map(|d| d.prob)
    }
}

/// Per-replica `S_n^{b_n}/d_n` along the checkpoint grid.
fn trimmed_ratios(
    process: &ProcessSpec,
    plan: &CheckpointPlan,
    norms: &[f64],
    seed: SeedRecord,
) -> Result<Vec<f64>, ExperimentError> {
    let rows = run_plan_stream(process.stream(seed)?, plan)?;
    Ok(rows.iter().zip(norms).map(|(r, d)| r.trimmed_sum / d).collect())
}

pub fn run_mean_convergence(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ConvergenceReport, ExperimentError> {
    cfg.validate(2)?;
    let (norm_tail, _) = cfg.known_tail()?;
    let bs = cfg.schedule.check_grid(&cfg.checkpoints)?;
    let norms = cfg
        .checkpoints
        .iter()
        .zip(&bs)
        .map(|(&n, &b)| d_norming(&norm_tail, n, b))
        .collect::<Result<Vec<_>, _>>()?;
    let plan = CheckpointPlan::new(
        cfg.checkpoints
            .iter()
            .zip(&bs)
            .map(|(&n, &b)| Checkpoint { n, b, f: f64::INFINITY })
            .collect(),
    )?;
    let outcome = run_replicas(cfg.replicas, opts, |i| {
        trimmed_ratios(&cfg.process, &plan, &norms, SeedRecord::new(cfg.master_seed, i))
    })?;
    let status = RunStatus::from_outcome(cfg.replicas, &outcome);
    let m = outcome.results.len();
    let mut rows = Vec::with_capacity(cfg.checkpoints.len());
    if m > 0 {
        for (j, (&n, &b)) in cfg.checkpoints.iter().zip(&bs).enumerate() {
            let ratios: Vec<f64> = outcome.results.iter().map(|r| r[j]).collect();
            let abs_err: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
            let (mean_ratio, mean_ratio_se) = mean_and_se(&ratios);
            let (mean_abs_error, mean_abs_error_se) = mean_and_se(&abs_err);
            let dev_prob = cfg
                .epsilon_grid
                .iter()
                .map(|&epsilon| {
                    let hits = abs_err.iter().filter(|e| **e > epsilon).count();
                    let prob = hits as f64 / m as f64;
                    DeviationProb {
                        epsilon,
                        prob,
                        se: (prob * (1.0 - prob) / m as f64).sqrt(),
                    }
                })
                .collect();
            rows.push(ConvergenceRow {
                n,
                b,
                d: norms[j],
                mean_abs_error,
                mean_abs_error_se,
                mean_ratio,
                mean_ratio_se,
                dev_prob,
            });
        }
    }
    Ok(ConvergenceReport {
        process: cfg.process.short_name().into(),
        rows,
        status,
    })
}

/// Hill estimate `((1/k) Σ_{i≤k} ln(x_(i)/x_(k+1)))^{-1}` on the top `k`
/// order statistics.
pub fn hill_estimator(values: &[f64], k: usize) -> Result<f64, ExperimentError> {
    if k < 2 || k >= values.len() {
        return Err(ExperimentError::Degenerate(format!(
            "need 2 ≤ k < {}, got k = {k}",
            values.len()
        )));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(ExperimentError::Degenerate("values must be positive and finite".into()));
    }
    let mut v = values.to_vec();
    hill_in_place(&mut v, k)
}

fn hill_in_place(v: &mut [f64], k: usize) -> Result<f64, ExperimentError> {
    // top k+1 in front, descending
    v.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
    let base = v[k];
    if !(base > 0.0) {
        return Err(ExperimentError::Degenerate("x_(k+1) = 0".into()));
    }
    let ln_base = base.ln();
    let s: CompensatedSum = v[..k].iter().map(|x| x.ln() - ln_base).collect();
    let mean = s.value() / k as f64;
    if !(mean > 0.0) {
        return Err(ExperimentError::Degenerate("top order statistics all equal".into()));
    }
    Ok(1.0 / mean)
}

pub fn default_hill_k(m: usize) -> usize {
    (m as f64).powf(0.6).ceil() as usize
}

/// Percentile bootstrap interval for the Hill estimate at fixed `k`.
pub fn hill_bootstrap_ci(
    values: &[f64],
    k: usize,
    resamples: u64,
    level: f64,
    master_seed: u64,
    opts: &RunOptions,
) -> Result<(f64, f64), ExperimentError> {
    if resamples < 2 {
        return config_err("bootstrap needs ≥ 2 resamples");
    }
    let pool = opts.pool()?;
    let n = values.len();
    let estimates: Vec<Result<f64, ExperimentError>> = pool.install(|| {
        (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = SeedRecord::new(master_seed, AUX_STREAM - r).rng();
                let mut sample: Vec<f64> = (0..n)
                    .map(|_| {
                        let idx = ((open_unit(&mut rng) * n as f64).ceil() as usize).clamp(1, n) - 1;
                        values[idx]
                    })
                    .collect();
                hill_in_place(&mut sample, k)
            })
            .collect()
    });
    // resamples with tied top order statistics are dropped
    let mut est: Vec<f64> = estimates.into_iter().filter_map(Result::ok).collect();
    if est.len() < 2 {
        return Err(ExperimentError::Degenerate("bootstrap resamples all degenerate".into()));
    }
    est.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        let pos = q * (est.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        est[lo] + (est[hi] - est[lo]) * (pos - lo as f64)
    };
    let tail = (1.0 - level) / 2.0;
    Ok((pick(tail), pick(1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleConfig {
    pub process: ProcessSpec,
    pub n: u64,
    pub b: u64,
    pub replicas: u64,
    pub master_seed: u64,
    /// Defaults to `⌈M^{0.6}⌉`.
    #[serde(default)]
    pub hill_k: Option<usize>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: u64,
    #[serde(default = "default_omegas")]
    pub omega_grid: Vec<f64>,
    /// Replica counts for running means; defaults to decades up to `M`.
    #[serde(default)]
    pub running_grid: Vec<u64>,
}

pub fn default_bootstrap() -> u64 {
    1000
}

pub fn default_omegas() -> Vec<f64> {
    vec![0.5, 0.1, 0.01]
}

impl CounterexampleConfig {
    pub fn doubling(gamma: f64, n: u64, b: u64, replicas: u64, master_seed: u64) -> Self {
        Self {
            process: ProcessSpec::doubling(gamma),
            n,
            b,
            replicas,
            master_seed,
            hill_k: None,
            bootstrap: default_bootstrap(),
            omega_grid: default_omegas(),
            running_grid: Vec::new(),
        }
    }

    pub fn running_grid_or_default(&self) -> Vec<u64> {
        if !self.running_grid.is_empty() {
            return self.running_grid.clone();
        }
        let mut out = Vec::new();
        let mut m = 10u64;
        while m < self.replicas {
            out.push(m);
            m *= 10;
        }
        out.push(self.replicas);
        out
    }

    fn gamma(&self) -> Option<f64> {
        match self.process {
            ProcessSpec::DoublingPareto { gamma, .. } => Some(gamma),
            _ => None,
        }
    }
}

/// Empirical frequency of `{S_n^{b_n} ≥ (ω·2^{−b})^{−γ}}` next to `ω`, with
/// the closed-form minorant `ω^{1−γ}·2^{−b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaCheck {
    pub omega: f64,
    pub threshold: f64,
    pub empirical_frequency: f64,
    pub minorant: f64,
}

/// Closed-form threshold `(ω·2^{−b})^{−γ}` and minorant `ω^{1−γ}·2^{−b}`.
pub fn omega_bound(gamma: f64, b: u64, omega: f64) -> (f64, f64) {
    let b = b as f64;
    let threshold = (-gamma * (omega.log2() - b)).exp2();
    let minorant = ((1.0 - gamma) * omega.log2() - b).exp2();
    (threshold, minorant)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunningMean {
    pub replicas: u64,
    pub mean: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub process: String,
    pub n: u64,
    pub b: u64,
    pub hill_k: usize,
    pub hill_index: f64,
    pub hill_ci: (f64, f64),
    pub running_means: Vec<RunningMean>,
    pub omega_checks: Vec<OmegaCheck>,
    pub max_sample: f64,
    pub divergence_flag: bool,
    pub status: RunStatus,
}

pub fn run_counterexample(
    cfg: &CounterexampleConfig,
    opts: &RunOptions,
) -> Result<TailReport, ExperimentError> {
    cfg.process.validate()?;
    if cfg.replicas < 3 {
        return config_err("replicas must be ≥ 3");
    }
    if cfg.b == 0 || cfg.b >= cfg.n {
        return config_err(format!("need 1 ≤ b < n, got b = {}, n = {}", cfg.b, cfg.n));
    }
    if cfg.omega_grid.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
        return config_err("omega grid must lie in (0, 1)");
    }
    let grid = cfg.running_grid_or_default();
    if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|m| *m == 0 || *m > cfg.replicas) {
        return config_err("running grid must be increasing within 1..=replicas");
    }
    let plan = CheckpointPlan::new(vec![Checkpoint {
        n: cfg.n,
        b: cfg.b,
        f: f64::INFINITY,
    }])?;
    let outcome = run_replicas(cfg.replicas, opts, |i| {
        let rows = run_plan_stream(cfg.process.stream(SeedRecord::new(cfg.master_seed, i))?, &plan)?;
        Ok(rows[0].trimmed_sum)
    })?;
    let status = RunStatus::from_outcome(cfg.replicas, &outcome);
    let samples = outcome.results;
    let m = samples.len();
    let k = cfg.hill_k.unwrap_or_else(|| default_hill_k(m));
    let hill_index = hill_estimator(&samples, k)?;
    let hill_ci = hill_bootstrap_ci(&samples, k, cfg.bootstrap, 0.95, cfg.master_seed, opts)?;
    let running_means = grid
        .iter()
        .filter(|&&mp| mp as usize <= m)
        .map(|&mp| {
            let (mean, se) = mean_and_se(&samples[..mp as usize]);
            RunningMean { replicas: mp, mean, se }
        })
        .collect();
    let omega_checks = match cfg.gamma() {
        Some(gamma) => cfg
            .omega_grid
            .iter()
            .map(|&omega| {
                let (threshold, minorant) = omega_bound(gamma, cfg.b, omega);
                let hits = samples.iter().filter(|s| **s >= threshold).count();
                OmegaCheck {
                    omega,
                    threshold,
                    empirical_frequency: hits as f64 / m as f64,
                    minorant,
                }
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(TailReport {
        process: cfg.process.short_name().into(),
        n: cfg.n,
        b: cfg.b,
        hill_k: k,
        hill_index,
        hill_ci,
        running_means,
        omega_checks,
        max_sample: samples.iter().copied().fold(0.0, f64::max),
        divergence_flag: hill_index < 1.0 && hill_ci.1 < 1.0,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationRow {
    pub n: u64,
    pub b: u64,
    pub f: f64,
    pub mean_truncated: f64,
    pub mean_truncated_se: Option<f64>,
    pub exact: f64,
    pub asymptotic: f64,
    /// `(mean − exact)/SE`.
    pub z_score: Option<f64>,
    pub mean_trimmed_ratio: f64,
    pub mean_trimmed_ratio_se: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticRatio {
    pub f: f64,
    pub exact: f64,
    pub asymptotic: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub process: String,
    pub rows: Vec<TruncationRow>,
    pub asymptotic_ratios: Vec<AsymptoticRatio>,
    pub status: RunStatus,
}

pub fn default_f_grid() -> Vec<f64> {
    vec![1e2, 1e3, 1e4, 1e5, 1e6]
}

/// `E[X; X ≤ f]` for the process marginal and its asymptotic
/// `α/(1−α)·L(f)·f^{1−α}`.
fn truncated_moment(
    process: &ProcessSpec,
    marginal: &dyn TailLaw,
    norm_tail: &RegVaryingTail,
    f: f64,
) -> Result<(f64, f64), ExperimentError> {
    let asymptotic = norm_tail.truncated_first_moment(f.max(norm_tail.support_left()))?.asymptotic;
    let exact = match process {
        ProcessSpec::LurothStep { alpha } => LurothTail { alpha: *alpha }.truncated_mean(f)?,
        _ if f < marginal.support_left() => 0.0,
        _ => marginal.truncated_mean(f)?,
    };
    Ok((exact, asymptotic))
}

/// Empirical `T_n^f` against `n·E[X; X ≤ f]`, with `f = g_n` unless given, and
/// the finite-`n` mean of `S_n^{b_n}/d_n`.
pub fn run_truncation_check(
    cfg: &ExperimentConfig,
    f: Option<f64>,
    f_grid: &[f64],
    opts: &RunOptions,
) -> Result<TruncationReport, ExperimentError> {
    cfg.validate(1)?;
    let (norm_tail, marginal) = cfg.known_tail()?;
    if let Some(f) = f {
        if !(f >= 0.0) {
            return config_err("truncation level must be ≥ 0");
        }
    }
    let bs = cfg.schedule.check_grid(&cfg.checkpoints)?;
    let mut levels = Vec::with_capacity(bs.len());
    let mut norms = Vec::with_capacity(bs.len());
    for (&n, &b) in cfg.checkpoints.iter().zip(&bs) {
        levels.push(match f {
            Some(f) => f,
            None => g_threshold(marginal.as_ref(), n, b)?,
        });
        norms.push(d_norming(&norm_tail, n, b)?);
    }
    let plan = CheckpointPlan::new(
        cfg.checkpoints
            .iter()
            .zip(&bs)
            .zip(&levels)
            .map(|((&n, &b), &f)| Checkpoint { n, b, f })
            .collect(),
    )?;
    if !plan.is_monotone() {
        return config_err("schedule must be non-decreasing along the checkpoints");
    }
    let outcome = run_replicas(cfg.replicas, opts, |i| {
        let rows = run_plan_stream(cfg.process.stream(SeedRecord::new(cfg.master_seed, i))?, &plan)?;
        Ok(rows
            .iter()
            .zip(&norms)
            .map(|(r, d)| (r.truncated_sum, r.trimmed_sum / d))
            .collect::<Vec<_>>())
    })?;
    let status = RunStatus::from_outcome(cfg.replicas, &outcome);
    let mut rows = Vec::new();
    if !outcome.results.is_empty() {
        for (j, (&n, &b)) in cfg.checkpoints.iter().zip(&bs).enumerate() {
            let trunc: Vec<f64> = outcome.results.iter().map(|r| r[j].0).collect();
            let ratio: Vec<f64> = outcome.results.iter().map(|r| r[j].1).collect();
            let (mean_truncated, mean_truncated_se) = mean_and_se(&trunc);
            let (mean_trimmed_ratio, mean_trimmed_ratio_se) = mean_and_se(&ratio);
            let (e1, a1) = truncated_moment(&cfg.process, marginal.as_ref(), &norm_tail, levels[j])?;
            let exact = n as f64 * e1;
            rows.push(TruncationRow {
                n,
                b,
                f: levels[j],
                mean_truncated,
                mean_truncated_se,
                exact,
                asymptotic: n as f64 * a1,
                z_score: mean_truncated_se
                    .filter(|se| *se > 0.0)
                    .map(|se| (mean_truncated - exact) / se),
                mean_trimmed_ratio,
                mean_trimmed_ratio_se,
            });
        }
    }
    let asymptotic_ratios = f_grid
        .iter()
        .map(|&f| {
            let (exact, asymptotic) = truncated_moment(&cfg.process, marginal.as_ref(), &norm_tail, f)?;
            Ok(AsymptoticRatio {
                f,
                exact,
                asymptotic,
                ratio: exact / asymptotic,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(TruncationReport {
        process: cfg.process.short_name().into(),
        rows,
        asymptotic_ratios,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingConfig {
    pub process: ProcessSpec,
    pub lags: Vec<u64>,
    pub family: EventFamily,
    pub anchor: u64,
    pub replicas: u64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub process: String,
    pub estimates: Vec<PsiEstimate>,
    /// Smallest lag with estimate below one, if any.
    pub min_lag: Option<u64>,
    pub status: RunStatus,
}

/// ψ estimates at each lag from `M` independent replicas, one path each.
pub fn run_mixing(cfg: &MixingConfig, opts: &RunOptions) -> Result<MixingReport, ExperimentError> {
    cfg.process.validate()?;
    cfg.family.validate()?;
    if cfg.lags.is_empty() || cfg.lags.windows(2).any(|w| w[0] >= w[1]) || cfg.lags[0] == 0 {
        return config_err("lags must be positive and strictly increasing");
    }
    let mut counters = cfg
        .lags
        .iter()
        .map(|&lag| PsiCounter::new(&cfg.family, lag, cfg.anchor))
        .collect::<Result<Vec<_>, _>>()?;
    let len = counters.iter().map(PsiCounter::required_len).max().unwrap_or(0);
    let outcome = run_replicas(cfg.replicas, opts, |i| {
        let path = cfg
            .process
            .stream(SeedRecord::new(cfg.master_seed, i))?
            .take(len)
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(path)
    })?;
    let status = RunStatus::from_outcome(cfg.replicas, &outcome);
    for path in &outcome.results {
        for c in counters.iter_mut() {
            c.observe(path)?;
        }
    }
    let estimates = counters
        .iter()
        .map(PsiCounter::estimate)
        .collect::<Result<Vec<_>, _>>()?;
    let min_lag = if consecutive_from_one(&cfg.lags) {
        crate::mixing::min_mixing_lag(&estimates, 1.0)
    } else {
        None
    };
    Ok(MixingReport {
        process: cfg.process.short_name().into(),
        estimates,
        min_lag,
        status,
    })
}

fn consecutive_from_one(lags: &[u64]) -> bool {
    lags.iter().enumerate().all(|(i, &l)| l == i as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regvar::SlowlyVaryingSpec;

    #[test]
    fn hill_examples() {
        let n = 10_000usize;
        let grid: Vec<f64> = (1..=n).map(|i| (i as f64 / n as f64).powi(-2)).collect();
        let h = hill_estimator(&grid, 100).unwrap();
        // (2·(ln(k+1) − ln(k!)/k))^{-1}
        let ln_fact: f64 = (1..=100).map(|i| (i as f64).ln()).sum();
        let exact = 1.0 / (2.0 * (101f64.ln() - ln_fact / 100.0));
        assert!((h / exact - 1.0).abs() < 1e-12, "{h} vs {exact}");
        assert!((h - 0.5).abs() < 0.02, "{h}");
        assert!(hill_estimator(&[3.0; 50], 10).is_err());
        let e = std::f64::consts::E;
        let mut v = vec![e * e, e, 1.0];
        v.extend(std::iter::repeat_n(0.5, 10));
        assert!((hill_estimator(&v, 2).unwrap() - 1.0 / 1.5).abs() < 1e-15);
        assert!(hill_estimator(&v, 1).is_err());
        assert!(hill_estimator(&v, v.len()).is_err());
    }

    #[test]
    fn omega_bound_example() {
        let (t, m) = omega_bound(2.0, 3, 0.1);
        assert!((t / 6400.0 - 1.0).abs() < 1e-12);
        assert!((m - 1.25).abs() < 1e-12);
    }

    fn small_cfg(process: ProcessSpec, replicas: u64) -> ExperimentConfig {
        ExperimentConfig {
            process,
            schedule: TrimmingSchedule::power(0.7),
            checkpoints: vec![100, 1000],
            replicas,
            master_seed: 42,
            epsilon_grid: default_epsilons(),
        }
    }

    #[test]
    fn convergence_smoke_and_determinism() {
        let cfg = small_cfg(ProcessSpec::luroth(0.5), 2);
        let a = run_mean_convergence(&cfg, &RunOptions::with_workers(1)).unwrap();
        let b = run_mean_convergence(&cfg, &RunOptions::with_workers(3)).unwrap();
        assert_eq!(a, b);
        for r in &a.rows {
            assert!(r.mean_abs_error.is_finite() && r.mean_abs_error > 0.0);
            assert!(r.mean_abs_error >= (r.mean_ratio - 1.0).abs() - 1e-15);
            assert!(r.dev_prob.windows(2).all(|w| w[0].prob >= w[1].prob));
        }
        assert!(!a.status.partial);
    }

    #[test]
    fn convergence_refusals() {
        let mut cfg = small_cfg(ProcessSpec::luroth(0.5), 1);
        assert!(run_mean_convergence(&cfg, &RunOptions::default()).is_err());
        cfg.replicas = 2;
        cfg.schedule = TrimmingSchedule::Explicit {
            table: vec![(100, 0), (1000, 0)],
        };
        assert!(matches!(
            run_mean_convergence(&cfg, &RunOptions::default()),
            Err(ExperimentError::Norming(_))
        ));
        let cfg = small_cfg(ProcessSpec::doubling(2.0), 2);
        assert!(run_mean_convergence(&cfg, &RunOptions::default()).is_err());
    }

    #[test]
    fn cancelled_run_is_partial() {
        let cancel = Arc::new(AtomicBool::new(true));
        let opts = RunOptions {
            workers: Some(1),
            cancel: Some(cancel),
        };
        let r = run_mean_convergence(&small_cfg(ProcessSpec::luroth(0.5), 10), &opts).unwrap();
        assert!(r.status.partial);
        assert_eq!(r.status.replicas_completed, 0);
        assert!(r.rows.is_empty());
    }

    #[test]
    fn truncation_check_small() {
        let tail = RegVaryingTail::new(0.5, SlowlyVaryingSpec::constant(1.0)).unwrap();
        let mut cfg = small_cfg(ProcessSpec::iid(tail), 1);
        cfg.checkpoints = vec![1000];
        let r = run_truncation_check(&cfg, Some(0.5), &[], &RunOptions::default()).unwrap();
        assert_eq!(r.rows[0].mean_truncated, 0.0);
        assert_eq!(r.rows[0].exact, 0.0);
        assert!(r.rows[0].mean_truncated_se.is_none());
    }

    #[test]
    fn counterexample_smoke() {
        let cfg = CounterexampleConfig {
            bootstrap: 50,
            ..CounterexampleConfig::doubling(2.0, 1000, 3, 10, 5)
        };
        let r = run_counterexample(&cfg, &RunOptions::default()).unwrap();
        assert!(r.hill_index > 0.0);
        assert_eq!(r.running_means.len(), 1);
        assert_eq!(r.omega_checks.len(), 3);
    }
}
