//! Restricted ψ-dependence estimates.
//!
//! For events `B` in the past and `C` in the future of a lag-`n` gap,
//! `ψ(B, C) = |P(B∩C)/(P(B)P(C)) − 1|`. The coefficient `ψ(n)` is a supremum
//! over whole σ-fields; here it is restricted to a finite family of threshold
//! events, so every estimate is a lower bound on `ψ(n)`.
//!
//! Counting is across replicas, one observation per replica, which keeps the
//! counts binomial.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixingError {
    #[error("undefined event: P(B) and P(C) must be positive (b = {b}, c = {c})")]
    UndefinedEvent { b: u64, c: u64 },
    #[error("inconsistent counts: joint = {joint}, b = {b}, c = {c}, total = {total}")]
    BadCounts { joint: u64, b: u64, c: u64, total: u64 },
    #[error("invalid event family: {0}")]
    InvalidFamily(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub joint: u64,
    pub b: u64,
    pub c: u64,
    pub total: u64,
}

/// `|(joint/total)/((b/total)(c/total)) − 1|`, computed as
/// `|joint·total − b·c| / (b·c)` in exact integer arithmetic.
pub fn psi_measure(k: EventCounts) -> Result<f64, MixingError> {
    if k.b == 0 || k.c == 0 {
        return Err(MixingError::UndefinedEvent { b: k.b, c: k.c });
    }
    if k.total < k.b.max(k.c) || k.joint > k.b.min(k.c) {
        return Err(MixingError::BadCounts {
            joint: k.joint,
            b: k.b,
            c: k.c,
            total: k.total,
        });
    }
    let num = (k.joint as u128 * k.total as u128).abs_diff(k.b as u128 * k.c as u128);
    Ok(num as f64 / (k.b as u128 * k.c as u128) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFamily {
    pub thresholds: Vec<f64>,
    pub depth: u8,
    pub min_count: u64,
}

pub const DEFAULT_MIN_COUNT: u64 = 20;

impl EventFamily {
    pub fn new(thresholds: Vec<f64>, depth: u8) -> Result<Self, MixingError> {
        let f = Self {
            thresholds,
            depth,
            min_count: DEFAULT_MIN_COUNT,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), MixingError> {
        if self.thresholds.is_empty() {
            return Err(MixingError::InvalidFamily("no thresholds".into()));
        }
        if self.thresholds.iter().any(|a| !a.is_finite())
            || self.thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(MixingError::InvalidFamily(
                "thresholds must be finite and strictly increasing".into(),
            ));
        }
        if !(1..=2).contains(&self.depth) {
            return Err(MixingError::InvalidFamily(format!("depth must be 1 or 2, got {}", self.depth)));
        }
        if self.min_count < DEFAULT_MIN_COUNT {
            return Err(MixingError::InvalidFamily(format!(
                "min_count must be ≥ {DEFAULT_MIN_COUNT}, got {}",
                self.min_count
            )));
        }
        Ok(())
    }

    /// Events as conjunctions `X_{anchor+offset} > a` over offsets `0` or
    /// `(first, first+1)`.
    fn events(&self, first: i64, second: i64) -> Vec<Event> {
        let mut out: Vec<Event> = self
            .thresholds
            .iter()
            .map(|&a| Event {
                terms: vec![(second, a)],
            })
            .collect();
        if self.depth == 2 {
            for &a1 in &self.thresholds {
                for &a2 in &self.thresholds {
                    out.push(Event {
                        terms: vec![(first, a1), (first + 1, a2)],
                    });
                }
            }
        }
        out
    }

    /// Past events end at offset 0: `{X_k > a}` and `{X_{k−1} > a1, X_k > a2}`.
    fn past(&self) -> Vec<Event> {
        self.events(-1, 0)
    }

    /// Future events start at offset `lag`.
    fn future(&self, lag: u64) -> Vec<Event> {
        let l = lag as i64;
        self.events(l, l)
    }
}

/// Conjunction of threshold exceedances at offsets from the anchor.
#[derive(Debug, Clone, PartialEq)]
struct Event {
    terms: Vec<(i64, f64)>,
}

impl Event {
    #[inline]
    fn holds(&self, path: &[f64], anchor: usize) -> bool {
        self.terms
            .iter()
            .all(|&(off, a)| path[(anchor as i64 + off - 1) as usize] > a)
    }

    fn describe(&self, anchor: u64) -> String {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|&(off, a)| format!("X[{}]>{}", anchor as i64 + off, a))
            .collect();
        parts.join("&")
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe(0))
    }
}

/// Mergeable joint and marginal event counts for one (family, lag, anchor).
#[derive(Debug, Clone, PartialEq)]
pub struct PsiCounter {
    past: Vec<Event>,
    future: Vec<Event>,
    joint: Vec<u64>,
    b: Vec<u64>,
    c: Vec<u64>,
    total: u64,
    lag: u64,
    anchor: u64,
    family: EventFamily,
    scratch_b: Vec<bool>,
    scratch_c: Vec<bool>,
}

impl PsiCounter {
    pub fn new(family: &EventFamily, lag: u64, k_anchor: u64) -> Result<Self, MixingError> {
        family.validate()?;
        if lag == 0 {
            return Err(MixingError::InvalidFamily("lag must be ≥ 1".into()));
        }
        if k_anchor < family.depth as u64 {
            return Err(MixingError::InvalidFamily(format!(
                "anchor must be ≥ depth = {}, got {k_anchor}",
                family.depth
            )));
        }
        let past = family.past();
        let future = family.future(lag);
        let (nb, nc) = (past.len(), future.len());
        Ok(Self {
            past,
            future,
            joint: vec![0; nb * nc],
            b: vec![0; nb],
            c: vec![0; nc],
            total: 0,
            lag,
            anchor: k_anchor,
            family: family.clone(),
            scratch_b: vec![false; nb],
            scratch_c: vec![false; nc],
        })
    }

    /// Path length needed per replica.
    pub fn required_len(&self) -> usize {
        (self.anchor + self.lag + self.family.depth as u64) as usize
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn observe(&mut self, path: &[f64]) -> Result<(), MixingError> {
        if path.len() < self.required_len() {
            return Err(MixingError::InsufficientData(format!(
                "path length {} < anchor + lag + depth = {}",
                path.len(),
                self.required_len()
            )));
        }
        let anchor = self.anchor as usize;
        for (i, e) in self.past.iter().enumerate() {
            self.scratch_b[i] = e.holds(path, anchor);
            self.b[i] += self.scratch_b[i] as u64;
        }
        for (j, e) in self.future.iter().enumerate() {
            self.scratch_c[j] = e.holds(path, anchor);
            self.c[j] += self.scratch_c[j] as u64;
        }
        let nc = self.future.len();
        for (i, &hb) in self.scratch_b.iter().enumerate() {
            if hb {
                for (j, &hc) in self.scratch_c.iter().enumerate() {
                    self.joint[i * nc + j] += hc as u64;
                }
            }
        }
        self.total += 1;
        Ok(())
    }

    /// Adds the counts of `other`, which must share family, lag and anchor.
    pub fn merge(&mut self, other: &PsiCounter) {
        assert!(
            self.family == other.family && self.lag == other.lag && self.anchor == other.anchor,
            "merging counters of different shapes"
        );
        for (a, b) in self.joint.iter_mut().zip(&other.joint) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn estimate(&self) -> Result<PsiEstimate, MixingError> {
        let min_m = 10 * self.family.min_count;
        if self.total < min_m {
            return Err(MixingError::InsufficientData(format!(
                "{} replicas < 10·min_count = {min_m}",
                self.total
            )));
        }
        let nc = self.future.len();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..self.past.len() {
            if self.b[i] < self.family.min_count {
                continue;
            }
            for j in 0..nc {
                if self.c[j] < self.family.min_count {
                    continue;
                }
                let psi = psi_measure(self.counts(i, j))?;
                if best.is_none_or(|(v, _, _)| psi > v) {
                    best = Some((psi, i, j));
                }
            }
        }
        let (value, i, j) = best.ok_or_else(|| {
            MixingError::InsufficientData(format!(
                "no event pair reaches min_count = {}",
                self.family.min_count
            ))
        })?;
        let counts = self.counts(i, j);
        Ok(PsiEstimate {
            lag: self.lag,
            value,
            argmax_events: (self.past[i].describe(self.anchor), self.future[j].describe(self.anchor)),
            sample_size: self.total,
            standard_error: ratio_standard_error(counts),
            counts,
        })
    }

    fn counts(&self, i: usize, j: usize) -> EventCounts {
        EventCounts {
            joint: self.joint[i * self.future.len() + j],
            b: self.b[i],
            c: self.c[j],
            total: self.total,
        }
    }
}

/// Delta-method standard error of `R = P(B∩C)/(P(B)P(C))`, which is also the
/// standard error of `ψ = |R − 1|` away from `R = 1`.
pub fn ratio_standard_error(k: EventCounts) -> Option<f64> {
    if k.joint == 0 || k.b == 0 || k.c == 0 || k.total == 0 {
        return None;
    }
    let m = k.total as f64;
    let (pj, pb, pc) = (k.joint as f64 / m, k.b as f64 / m, k.c as f64 / m);
    let r = pj / (pb * pc);
    let var_log = (1.0 / pj - 1.0 / pb - 1.0 / pc + 2.0 * r - 1.0) / m;
    Some(r * var_log.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiEstimate {
    pub lag: u64,
    /// Supremum over the event family: a lower bound on `ψ(lag)`.
    pub value: f64,
    pub argmax_events: (String, String),
    pub sample_size: u64,
    pub standard_error: Option<f64>,
    pub counts: EventCounts,
}

/// Across-replica estimate from stored paths.
pub fn estimate_psi<P: AsRef<[f64]>>(
    paths: &[P],
    lag: u64,
    fam: &EventFamily,
    k_anchor: u64,
) -> Result<PsiEstimate, MixingError> {
    let mut counter = PsiCounter::new(fam, lag, k_anchor)?;
    for p in paths {
        counter.observe(p.as_ref())?;
    }
    counter.estimate()
}

/// Smallest lag whose estimate is below `threshold`; `None` means the
/// hypothesis `ψ(r) < 1` was not witnessed on the lags given.
pub fn min_mixing_lag(estimates: &[PsiEstimate], threshold: f64) -> Option<u64> {
    estimates.iter().find(|e| e.value < threshold).map(|e| e.lag)
}
