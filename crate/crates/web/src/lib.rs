//! Browser demo: three small computations behind `wasm-bindgen` exports.
//!
//! Each export returns a JSON string for the page in `www/` to draw. The
//! `*_json` functions hold the logic and are plain Rust so they can be tested
//! natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use trimlab::mixing::PsiCounter;
use trimlab::norming::{d_norming, norming_row};
use trimlab::rng::SeedRecord;
use trimlab::trimming::{run_plan_stream, Checkpoint, CheckpointPlan};
use trimlab::{EventFamily, ProcessSpec, RegVaryingTail, SlowlyVaryingSpec, TrimmingSchedule};

const MAX_PATH: u64 = 2_000_000;
const MAX_REPLICAS: u64 = 200_000;

#[derive(Serialize)]
struct CurvePoint {
    n: u64,
    b: u64,
    d: f64,
    g: f64,
    ratio: f64,
}

/// Log-spaced integers from `10^lo` to `10^hi`, deduplicated.
fn log_grid(lo: f64, hi: f64, points: u32) -> Vec<u64> {
    let points = points.max(2);
    let mut out: Vec<u64> = (0..points)
        .map(|i| {
            let e = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            10f64.powf(e).round() as u64
        })
        .collect();
    out.dedup();
    out
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Norming sequence, threshold and ratio diagnostic along `n = 10^lo..10^hi`.
pub fn norming_curve_json(alpha: f64, l: &str, theta: f64, lo: f64, hi: f64, points: u32) -> Result<String, String> {
    if !(lo >= 1.0 && hi > lo && hi <= 15.0) {
        return Err("need 1 ≤ lo < hi ≤ 15".into());
    }
    let l: SlowlyVaryingSpec = l.parse().map_err(err)?;
    let support = RegVaryingTail::admissible_support(alpha, &l).map_err(err)?;
    let tail = RegVaryingTail::with_support(alpha, l, support).map_err(err)?;
    let schedule = TrimmingSchedule::power(theta);
    schedule.validate().map_err(err)?;
    let mut out = Vec::new();
    for n in log_grid(lo, hi, points) {
        let b = schedule.b(n).map_err(err)?;
        if b < 2 || b >= n {
            continue;
        }
        let r = norming_row(&tail, n, b).map_err(err)?;
        out.push(CurvePoint {
            n,
            b,
            d: r.d,
            g: r.g,
            ratio: r.ratio_dg_over_ab,
        });
    }
    serde_json::to_string(&out).map_err(err)
}

fn demo_process(process: &str, param: f64) -> Result<(ProcessSpec, RegVaryingTail), String> {
    let spec = match process {
        "iid" => ProcessSpec::iid(RegVaryingTail::pareto(param).map_err(err)?),
        "luroth" => ProcessSpec::luroth(param),
        "doubling-pareto" => ProcessSpec::doubling(param),
        other => return Err(format!("unknown process `{other}`")),
    };
    spec.validate().map_err(err)?;
    let norm = spec.norming_tail().ok_or("no norming tail")?;
    Ok((spec, norm))
}

#[derive(Serialize)]
struct TrajectoryPoint {
    n: u64,
    b: u64,
    trimmed_ratio: f64,
    untrimmed_ratio: f64,
}

/// `S_n^{b_n}/d_n` and `S_n/d_n` along one sample path.
pub fn trimmed_trajectory_json(process: &str, param: f64, theta: f64, n_max: u64, seed: u64, points: u32) -> Result<String, String> {
    if !(10..=MAX_PATH).contains(&n_max) {
        return Err(format!("path length must be in 10..={MAX_PATH}"));
    }
    let (spec, norm) = demo_process(process, param)?;
    let schedule = TrimmingSchedule::power(theta);
    schedule.validate().map_err(err)?;
    let mut cps = Vec::new();
    for n in log_grid(1.0, (n_max as f64).log10(), points) {
        let b = schedule.b(n).map_err(err)?;
        if b >= 1 && b < n {
            cps.push(Checkpoint { n, b, f: f64::INFINITY });
        }
    }
    let plan = CheckpointPlan::new(cps).map_err(err)?;
    let rows = run_plan_stream(spec.stream(SeedRecord::new(seed, 0)).map_err(err)?, &plan).map_err(err)?;
    let out = rows
        .iter()
        .map(|r| {
            let d = d_norming(&norm, r.n, r.b).map_err(err)?;
            Ok(TrajectoryPoint {
                n: r.n,
                b: r.b,
                trimmed_ratio: r.trimmed_sum / d,
                untrimmed_ratio: r.sum / d,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct PsiPoint {
    lag: u64,
    psi: f64,
    se: Option<f64>,
    events: (String, String),
}

/// Restricted ψ lower bounds at lags `1..=max_lag`.
pub fn psi_lags_json(process: &str, param: f64, thresholds: &str, max_lag: u64, replicas: u64, seed: u64) -> Result<String, String> {
    if !(1..=16).contains(&max_lag) {
        return Err("max_lag must be in 1..=16".into());
    }
    if replicas > MAX_REPLICAS {
        return Err(format!("at most {MAX_REPLICAS} replicas"));
    }
    let (spec, _) = demo_process(process, param)?;
    let thresholds = thresholds
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad threshold `{t}`")))
        .collect::<Result<Vec<_>, _>>()?;
    let family = EventFamily::new(thresholds, 1).map_err(err)?;
    let mut counters = (1..=max_lag)
        .map(|lag| PsiCounter::new(&family, lag, 1))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let len = counters.last().map(PsiCounter::required_len).unwrap_or(0);
    for i in 0..replicas {
        let path = spec
            .stream(SeedRecord::new(seed, i))
            .map_err(err)?
            .take(len)
            .collect::<Result<Vec<f64>, _>>()
            .map_err(err)?;
        for c in counters.iter_mut() {
            c.observe(&path).map_err(err)?;
        }
    }
    let out = counters
        .iter()
        .map(|c| {
            let e = c.estimate().map_err(err)?;
            Ok(PsiPoint {
                lag: e.lag,
                psi: e.value,
                se: e.standard_error,
                events: e.argmax_events,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&out).map_err(err)
}

#[wasm_bindgen]
pub fn norming_curve(alpha: f64, l: &str, theta: f64, lo: f64, hi: f64, points: u32) -> Result<String, JsValue> {
    norming_curve_json(alpha, l, theta, lo, hi, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn trimmed_trajectory(process: &str, param: f64, theta: f64, n_max: u32, seed: u32, points: u32) -> Result<String, JsValue> {
    trimmed_trajectory_json(process, param, theta, n_max as u64, seed as u64, points).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn psi_lags(process: &str, param: f64, thresholds: &str, max_lag: u32, replicas: u32, seed: u32) -> Result<String, JsValue> {
    psi_lags_json(process, param, thresholds, max_lag as u64, replicas as u64, seed as u64).map_err(|e| JsValue::from_str(&e))
}
