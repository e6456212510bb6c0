//! Exit criteria. Runs every check at its fixed tolerance, prints one line per
//! criterion and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use trimlab::experiments::{
    default_epsilons, run_counterexample, run_mean_convergence, run_mixing, run_truncation_check, ConvergenceReport,
    CounterexampleConfig, ExperimentConfig, MixingConfig, RunOptions,
};
use trimlab::mixing::EventFamily;
use trimlab::norming::{d_norming, ln_d_norming};
use trimlab::processes::{validate_example_conditions, PiecewiseMapSpec, StepObservable};
use trimlab::regvar::debruijn_conjugate;
use trimlab::rng::replica_rng;
use trimlab::trimming::{run_plan, Checkpoint, CheckpointPlan};
use trimlab::{ProcessSpec, RegVaryingTail, SlowlyVaryingSpec, TrimmingSchedule};

const SEED: u64 = 20261014;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1. streaming trimmed and truncated sums against a full sort
fn trimming_oracle() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for i in 0..1000u64 {
        let mut rng = replica_rng(SEED, i);
        let len = rng.random_range(1..=1000usize);
        let alpha = rng.random_range(0.3..0.95);
        let path: Vec<f64> = (0..len).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha)).collect();
        let mut ns: Vec<u64> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(1..=len as u64)).collect();
        ns.sort_unstable();
        ns.dedup();
        let cps: Vec<Checkpoint> = ns
            .iter()
            .map(|&n| Checkpoint {
                n,
                b: if n == 1 { 0 } else { rng.random_range(0..n) },
                f: if rng.random_bool(0.2) { f64::INFINITY } else { rng.random_range(0.0..8.0f64).exp() },
            })
            .collect();
        let rows = run_plan(&path, &CheckpointPlan::new(cps.clone()).unwrap()).unwrap();
        for (row, cp) in rows.iter().zip(&cps) {
            let prefix = &path[..cp.n as usize];
            let mut sorted = prefix.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let trimmed: f64 = sorted[cp.b as usize..].iter().sum();
            let truncated: f64 = prefix.iter().filter(|&&x| x <= cp.f).sum();
            for (got, want) in [(row.trimmed_sum, trimmed), (row.truncated_sum, truncated)] {
                if got != want {
                    worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
                }
            }
            checked += 1;
        }
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-9 && within(t, 10.0),
        format!("{checked} checkpoints, max rel err {worst:.2e}, {:.2}s", t.as_secs_f64()),
    )
}

// 2. closed forms of the norming sequence
fn norming_closed_forms() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut points = 0;
    for alpha in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let tail = RegVaryingTail::pareto(alpha).unwrap();
        for n in [10u64, 1_000, 100_000, 10_000_000, 1_000_000_000] {
            for frac in [0.01, 0.1, 0.5, 0.9] {
                let b = ((n as f64 * frac).ceil() as u64).clamp(1, n - 1);
                let want = alpha / (1.0 - alpha) * (n as f64).powf(1.0 / alpha) * (b as f64).powf(1.0 - 1.0 / alpha);
                let got = d_norming(&tail, n, b).unwrap();
                worst = worst.max((got / want - 1.0).abs());
                points += 1;
            }
        }
    }
    let mut worst_c = 0.0f64;
    for alpha in [0.2, 0.5, 0.8] {
        for c in [0.5, 2.0, 4.0] {
            let one = ln_d_norming(alpha, &SlowlyVaryingSpec::constant(1.0), 10_000, 100).unwrap();
            let lc = ln_d_norming(alpha, &SlowlyVaryingSpec::constant(c), 10_000, 100).unwrap();
            let factor = (lc - one).exp();
            worst_c = worst_c.max((factor / c.powf(1.0 / alpha) - 1.0).abs());
        }
    }
    let t = start.elapsed();
    verdict(
        points == 100 && worst <= 1e-12 && worst_c <= 1e-6 && within(t, 1.0),
        format!("{points} points, max rel err {worst:.2e}; constant-L factor err {worst_c:.2e}"),
    )
}

// 3. de Bruijn residual at x = 1e8
fn debruijn_residual() -> Verdict {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for s in [
        SlowlyVaryingSpec::constant(2.0),
        SlowlyVaryingSpec::log_power(1.0),
        SlowlyVaryingSpec::log_power(-1.0),
    ] {
        match debruijn_conjugate(&s, 1e8, 1000, 1e-12) {
            Ok(c) => {
                pass &= c.residual <= 1e-3;
                parts.push(format!("{s}: {:.1e}", c.residual));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{s}: {e}"));
            }
        }
    }
    let t = start.elapsed();
    verdict(pass && within(t, 1.0), parts.join(", "))
}

fn convergence_run(process: ProcessSpec) -> ConvergenceReport {
    let cfg = ExperimentConfig {
        process,
        schedule: TrimmingSchedule::power(0.7),
        checkpoints: vec![1_000, 10_000, 100_000, 1_000_000],
        replicas: 200,
        master_seed: SEED,
        epsilon_grid: default_epsilons(),
    };
    run_mean_convergence(&cfg, &RunOptions::default()).unwrap()
}

// 4. convergence trend, 5. sample mean of the ratio at n = 1e6
fn mean_convergence(reports: &[ConvergenceReport], elapsed: Duration) -> (Verdict, Verdict) {
    let mut pass4 = within(elapsed, 600.0);
    let mut pass5 = true;
    let mut d4 = Vec::new();
    let mut d5 = Vec::new();
    for r in reports {
        let maes: Vec<f64> = r.rows.iter().map(|row| row.mean_abs_error).collect();
        let last = r.row(1_000_000).unwrap();
        let dev = r.dev_prob(1_000_000, 0.25).unwrap();
        let decreasing = maes.windows(2).all(|w| w[1] < w[0]);
        pass4 &= decreasing && (0.8..=1.2).contains(&last.mean_ratio) && dev <= 0.1 && !r.status.partial;
        d4.push(format!(
            "{}: mae {} ratio {:.4} dev(0.25) {:.3}",
            r.process,
            maes.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(">"),
            last.mean_ratio,
            dev
        ));
        let se = last.mean_ratio_se.unwrap_or(f64::INFINITY);
        let (lo, hi) = (last.mean_ratio - 3.0 * se, last.mean_ratio + 3.0 * se);
        pass5 &= lo <= 1.15 && hi >= 0.85;
        d5.push(format!("{}: {:.4} ± {:.4}", r.process, last.mean_ratio, se));
    }
    d4.push(format!("{:.1}s", elapsed.as_secs_f64()));
    (verdict(pass4, d4.join("; ")), verdict(pass5, d5.join("; ")))
}

// 6. truncated moment against its exact value
fn truncated_moment() -> Verdict {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        process: ProcessSpec::iid(RegVaryingTail::pareto(0.5).unwrap()),
        schedule: TrimmingSchedule::power(0.7),
        checkpoints: vec![10_000],
        replicas: 1000,
        master_seed: SEED,
        epsilon_grid: default_epsilons(),
    };
    let grid = [1e2, 1e3, 1e4, 1e5, 1e6];
    let r = run_truncation_check(&cfg, Some(100.0), &grid, &RunOptions::default()).unwrap();
    let row = &r.rows[0];
    let se = row.mean_truncated_se.unwrap();
    let ratios: Vec<f64> = r.asymptotic_ratios.iter().map(|a| a.ratio).collect();
    let toward_one = ratios.windows(2).all(|w| w[0] < w[1]) && ratios.iter().all(|&q| q <= 1.0);
    let t = start.elapsed();
    verdict(
        (row.mean_truncated - row.exact).abs() <= 3.0 * se && toward_one && within(t, 30.0),
        format!(
            "mean {:.1} exact {:.1} se {:.1}; ratios {}; {:.1}s",
            row.mean_truncated,
            row.exact,
            se,
            ratios.iter().map(|q| format!("{q:.4}")).collect::<Vec<_>>().join(" "),
            t.as_secs_f64()
        ),
    )
}

// 7. heavy tail of trimmed sums for the doubling map
fn counterexample() -> Verdict {
    let start = Instant::now();
    let n = 10_000u64;
    let b = TrimmingSchedule::power(0.5).b(n).unwrap();
    let cfg = CounterexampleConfig {
        running_grid: vec![1_000, 10_000, 100_000],
        ..CounterexampleConfig::doubling(2.0, n, b, 100_000, SEED)
    };
    let r = run_counterexample(&cfg, &RunOptions::default()).unwrap();
    let means: Vec<f64> = r.running_means.iter().map(|m| m.mean).collect();
    let growth = means.last().unwrap() / means[0];
    let t = start.elapsed();
    verdict(
        r.hill_index < 1.0 && r.hill_ci.1 < 1.0 && growth >= 2.0 && within(t, 300.0),
        format!(
            "b={b} hill {:.3} CI ({:.3}, {:.3}); running means {}; growth {growth:.3}; {:.1}s",
            r.hill_index,
            r.hill_ci.0,
            r.hill_ci.1,
            means.iter().map(|m| format!("{m:.4e}")).collect::<Vec<_>>().join(" "),
            t.as_secs_f64()
        ),
    )
}

// 8. ψ estimates for independent and fully dependent examples
fn psi_contrast() -> Verdict {
    let start = Instant::now();
    let run = |process, thresholds: Vec<f64>| {
        let cfg = MixingConfig {
            process,
            lags: vec![1, 2, 3],
            family: EventFamily::new(thresholds, 1).unwrap(),
            anchor: 1,
            replicas: 1_000_000,
            master_seed: SEED,
        };
        run_mixing(&cfg, &RunOptions::default()).unwrap()
    };
    let iid = run(ProcessSpec::iid(RegVaryingTail::pareto(0.5).unwrap()), vec![2.0, 10.0, 100.0]);
    let dbl = run(ProcessSpec::doubling(2.0), vec![4.0, 16.0]);
    let (i1, d1) = (&iid.estimates[0], &dbl.estimates[0]);
    let se = d1.standard_error.unwrap_or(f64::INFINITY);
    let t = start.elapsed();
    verdict(
        i1.value <= 0.1 && d1.value >= 0.9 && (d1.value - 1.0).abs() <= 3.0 * se && iid.min_lag == Some(1) && within(t, 60.0),
        format!(
            "iid ψ(1) {:.4}, min lag {:?}; doubling ψ(1) {:.4} ± {:.4}; {:.1}s",
            i1.value,
            iid.min_lag,
            d1.value,
            se,
            t.as_secs_f64()
        ),
    )
}

// 9. condition checklist for the Lüroth-type map and a slope mutant
fn map_validator() -> Verdict {
    let obs = StepObservable::PowerIndex { alpha: 0.5 };
    let canonical = validate_example_conditions(&PiecewiseMapSpec::luroth(), &obs, 4.0).unwrap();
    let mutant = validate_example_conditions(&PiecewiseMapSpec::luroth().with_slope(1, 0.5), &obs, 4.0).unwrap();
    let failed: Vec<&str> = mutant.checks().iter().filter(|c| !c.passed).map(|c| c.name).collect();
    verdict(
        canonical.all_passed() && failed == ["uniform_expansion"],
        format!("canonical all pass: {}; mutant fails {failed:?}", canonical.all_passed()),
    )
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn trimlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_trimlab")).args(args).output().unwrap()
}

// 10. manifest re-runs are byte-identical across worker counts
fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let runs: [(&str, &[&str]); 6] = [
        ("norming-table", &["--alpha", "0.5", "--checkpoints", "1e3,1e4,1e5,1e6"]),
        ("verify-mean", &["--process", "luroth", "--alpha", "0.5", "--checkpoints", "1e3,1e4", "--replicas", "64", "--seed", "5"]),
        (
            "counterexample",
            &["--n", "1000", "--b", "3", "--replicas", "2000", "--bootstrap", "100", "--running", "100,1000,2000", "--seed", "5"],
        ),
        ("mixing", &["--process", "doubling-pareto", "--lags", "1..3", "--replicas", "20000", "--seed", "5"]),
        (
            "truncation-check",
            &["--process", "iid", "--alpha", "0.5", "--checkpoints", "1e4", "--f", "100", "--replicas", "200", "--seed", "5"],
        ),
        ("validate-map", &["--map", "luroth", "--alpha", "0.5"]),
    ];
    let mut bad = Vec::new();
    for (cmd, flags) in runs {
        let first = tmp.path().join(format!("{cmd}-first"));
        let mut args = vec![cmd];
        args.extend_from_slice(flags);
        args.extend(["--plot-data", "--workers", "1", "--out", first.to_str().unwrap()]);
        let out = trimlab(&args);
        if !out.status.success() {
            bad.push(format!("{cmd}: exit {:?} {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim()));
            continue;
        }
        let reference = read_dir(&first);
        let manifest = first.join("manifest.json");
        for workers in ["1", "4"] {
            let dir = tmp.path().join(format!("{cmd}-w{workers}"));
            let out = trimlab(&[
                cmd,
                "--config",
                manifest.to_str().unwrap(),
                "--plot-data",
                "--workers",
                workers,
                "--out",
                dir.to_str().unwrap(),
            ]);
            if !out.status.success() {
                bad.push(format!("{cmd} w{workers}: exit {:?}", out.status.code()));
            } else if read_dir(&dir) != reference {
                bad.push(format!("{cmd} w{workers}: outputs differ"));
            }
        }
    }
    let detail = if bad.is_empty() { "6 commands x workers {1, 4} identical".to_string() } else { bad.join("; ") };
    verdict(bad.is_empty(), detail)
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id, name, v: Verdict| {
        println!("criterion {id:>2} {name:<24} {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    record(1, "trimming oracle", guarded(trimming_oracle));
    record(2, "norming closed forms", guarded(norming_closed_forms));
    record(3, "de Bruijn residual", guarded(debruijn_residual));
    let start = Instant::now();
    let reports = catch_unwind(|| {
        vec![
            convergence_run(ProcessSpec::iid(RegVaryingTail::pareto(0.5).unwrap())),
            convergence_run(ProcessSpec::luroth(0.5)),
        ]
    });
    match reports {
        Ok(reports) => {
            let (v4, v5) = mean_convergence(&reports, start.elapsed());
            record(4, "trimmed mean convergence", v4);
            record(5, "ratio sample mean", v5);
        }
        Err(_) => {
            record(4, "trimmed mean convergence", verdict(false, "panicked"));
            record(5, "ratio sample mean", verdict(false, "panicked"));
        }
    }
    record(6, "truncated moment", guarded(truncated_moment));
    record(7, "doubling counterexample", guarded(counterexample));
    record(8, "psi contrast", guarded(psi_contrast));
    record(9, "map validator", guarded(map_validator));
    record(10, "determinism", guarded(determinism));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
