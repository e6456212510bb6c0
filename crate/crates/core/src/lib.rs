//! Simulation and numerical verification of intermediately trimmed Birkhoff
//! sums for observables with regularly varying tails.
//!
//! The crate is organised bottom-up:
//!
//! - [`regvar`]: tails `L(x)·x^{-α}`, quantiles, truncated moments and
//!   de Bruijn conjugates.
//! - [`processes`]: stationary observable processes (i.i.d., Lüroth-type
//!   digits, doubling-map Pareto via exact bit streams, float orbits) and the
//!   interval-map condition validator.
//! - [`trimming`]: exact single-pass trimmed and truncated sums.
//! - [`norming`]: trimming schedules, `ζ_n`, `g_n` and the norming sequence
//!   `d_n`.
//! - [`mixing`]: restricted ψ-dependence estimates over threshold events.
//! - [`experiments`]: replicated Monte Carlo runs and their reports.
//! - [`report`]: CSV tables, plot data and config hashes for the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiments;
pub mod mixing;
pub mod norming;
pub mod numeric;
pub mod processes;
pub mod regvar;
pub mod report;
pub mod rng;
pub mod trimming;

pub use experiments::{
    hill_estimator, run_counterexample, run_mean_convergence, run_truncation_check,
    ConvergenceReport, CounterexampleConfig, ExperimentConfig, ExperimentError, RunOptions,
    TailReport, TruncationReport,
};
pub use mixing::{estimate_psi, min_mixing_lag, psi_measure, EventFamily, PsiEstimate};
pub use norming::{d_norming, g_threshold, norming_table, zeta, NormingTable, TrimmingSchedule};
pub use processes::{sample_path, ProcessError, ProcessSpec, SamplePath};
pub use regvar::{RegVarError, RegVaryingTail, SlowlyVaryingSpec, TailLaw};
pub use trimming::{run_plan, CheckpointPlan, CheckpointRow, TrimError, TrimmedAccumulator};
