//! Exact single-pass Birkhoff, trimmed and truncated sums.
//!
//! `S_n^b` drops the `b` largest summands. Under ties the permutation that
//! orders the summands is not unique, but the multiset of the `b` largest
//! values is, so `S_n^b` is well defined.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{CompensatedSum, Ordered};
use crate::processes::ProcessError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrimError {
    #[error("value {0} rejected: summands must be finite and non-negative")]
    BadValue(f64),
    #[error("trimming {b} values exceeds the retained capacity K_max = {k_max}")]
    PlanViolation { b: usize, k_max: usize },
    #[error("trimming {b} values from a prefix of length {count}")]
    TooFewValues { b: usize, count: u64 },
    #[error("invalid checkpoint plan: {0}")]
    InvalidPlan(String),
    #[error("path of length {len} ends before checkpoint n = {n}")]
    PathTooShort { len: usize, n: u64 },
    #[error("generator failed at index {index} before checkpoint n = {next_checkpoint}: {source}")]
    Source {
        index: u64,
        next_checkpoint: u64,
        source: ProcessError,
    },
}

/// Streaming accumulator retaining the `K_max` largest values seen.
///
/// The sum of the values outside the retained set is tracked separately, so
/// trimmed sums are formed by adding small terms rather than by subtracting
/// the top values from the total.
#[derive(Debug, Clone)]
pub struct TrimmedAccumulator {
    count: u64,
    total: CompensatedSum,
    below: CompensatedSum,
    retained: BinaryHeap<Reverse<Ordered>>,
    k_max: usize,
}

impl TrimmedAccumulator {
    pub fn new(k_max: usize) -> Self {
        Self {
            count: 0,
            total: CompensatedSum::new(),
            below: CompensatedSum::new(),
            retained: BinaryHeap::with_capacity(k_max + 1),
            k_max,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `S_n`.
    pub fn total(&self) -> f64 {
        self.total.value()
    }

    #[inline]
    pub fn push(&mut self, value: f64) -> Result<(), TrimError> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(TrimError::BadValue(value));
        }
        self.count += 1;
        self.total.add(value);
        if self.retained.len() < self.k_max {
            self.retained.push(Reverse(Ordered(value)));
            return Ok(());
        }
        match self.retained.peek() {
            Some(Reverse(Ordered(min))) if value > *min => {
                let Reverse(Ordered(evicted)) = self.retained.pop().expect("non-empty heap");
                self.below.add(evicted);
                self.retained.push(Reverse(Ordered(value)));
            }
            _ => self.below.add(value),
        }
        Ok(())
    }

    /// Retained values in descending order.
    pub fn retained_desc(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.retained.iter().map(|r| r.0 .0).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// `S_n^b`: the sum without the `b` largest values.
    pub fn trimmed_sum(&self, b: usize) -> Result<f64, TrimError> {
        if b > self.k_max {
            return Err(TrimError::PlanViolation { b, k_max: self.k_max });
        }
        if b as u64 > self.count {
            return Err(TrimError::TooFewValues { b, count: self.count });
        }
        if b == 0 {
            return Ok(self.total());
        }
        if b as u64 == self.count {
            return Ok(0.0);
        }
        let mut asc: Vec<f64> = self.retained.iter().map(|r| r.0 .0).collect();
        asc.sort_by(f64::total_cmp);
        let keep = asc.len() - b;
        let mut acc = self.below;
        for v in &asc[..keep] {
            acc.add(*v);
        }
        Ok(acc.value())
    }
}

/// `T_n^f`: the sum of values `≤ f`.
pub fn truncated_sum(values: &[f64], f: f64) -> f64 {
    values
        .iter()
        .copied()
        .filter(|v| *v <= f)
        .collect::<CompensatedSum>()
        .value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub n: u64,
    pub b: u64,
    /// Truncation level; `f64::INFINITY` disables truncation.
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPlan {
    checkpoints: Vec<Checkpoint>,
}

impl CheckpointPlan {
    pub fn new(checkpoints: Vec<Checkpoint>) -> Result<Self, TrimError> {
        let mut prev = 0u64;
        for c in &checkpoints {
            if c.n <= prev {
                return Err(TrimError::InvalidPlan(format!(
                    "checkpoints must be strictly increasing and ≥ 1 (n = {} after {prev})",
                    c.n
                )));
            }
            if c.b != 0 && c.b >= c.n {
                return Err(TrimError::InvalidPlan(format!(
                    "trimming b = {} must be below n = {}",
                    c.b, c.n
                )));
            }
            if c.f.is_nan() || c.f < 0.0 {
                return Err(TrimError::InvalidPlan(format!("truncation level {} < 0", c.f)));
            }
            prev = c.n;
        }
        Ok(Self { checkpoints })
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn k_max(&self) -> usize {
        self.checkpoints.iter().map(|c| c.b as usize).max().unwrap_or(0)
    }

    pub fn last_n(&self) -> u64 {
        self.checkpoints.last().map(|c| c.n).unwrap_or(0)
    }

    pub fn is_monotone(&self) -> bool {
        self.checkpoints.windows(2).all(|w| w[0].b <= w[1].b)
    }

    /// Maximal runs of checkpoints with non-decreasing `b`.
    pub fn monotone_segments(&self) -> Vec<CheckpointPlan> {
        let mut out: Vec<CheckpointPlan> = Vec::new();
        let mut current: Vec<Checkpoint> = Vec::new();
        for c in &self.checkpoints {
            if current.last().is_some_and(|last| last.b > c.b) {
                out.push(CheckpointPlan {
                    checkpoints: std::mem::take(&mut current),
                });
            }
            current.push(*c);
        }
        if !current.is_empty() {
            out.push(CheckpointPlan { checkpoints: current });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub n: u64,
    pub b: u64,
    pub f: f64,
    pub sum: f64,
    pub trimmed_sum: f64,
    pub truncated_sum: f64,
}

/// One pass over a stream serving every checkpoint of a monotone plan.
pub fn run_plan_stream<I>(values: I, plan: &CheckpointPlan) -> Result<Vec<CheckpointRow>, TrimError>
where
    I: IntoIterator<Item = Result<f64, ProcessError>>,
{
    if !plan.is_monotone() {
        return Err(TrimError::InvalidPlan(
            "a stream supports only plans with non-decreasing b".into(),
        ));
    }
    let cps = plan.checkpoints();
    let mut acc = TrimmedAccumulator::new(plan.k_max());
    let mut truncated: Vec<CompensatedSum> = vec![CompensatedSum::new(); cps.len()];
    let mut rows = Vec::with_capacity(cps.len());
    let mut next = 0usize;
    let mut iter = values.into_iter();
    while next < cps.len() {
        let index = acc.count();
        let value = match iter.next() {
            Some(Ok(v)) => v,
            Some(Err(source)) => {
                return Err(TrimError::Source {
                    index,
                    next_checkpoint: cps[next].n,
                    source,
                })
            }
            None => {
                return Err(TrimError::PathTooShort {
                    len: index as usize,
                    n: cps[next].n,
                })
            }
        };
        acc.push(value)?;
        for (j, c) in cps.iter().enumerate().skip(next) {
            if value <= c.f {
                truncated[j].add(value);
            }
        }
        while next < cps.len() && acc.count() == cps[next].n {
            let c = cps[next];
            rows.push(CheckpointRow {
                n: c.n,
                b: c.b,
                f: c.f,
                sum: acc.total(),
                trimmed_sum: acc.trimmed_sum(c.b as usize)?,
                truncated_sum: truncated[next].value(),
            });
            next += 1;
        }
    }
    Ok(rows)
}

/// Evaluates a plan over a stored path, one pass per monotone segment.
pub fn run_plan(values: &[f64], plan: &CheckpointPlan) -> Result<Vec<CheckpointRow>, TrimError> {
    if plan.last_n() as usize > values.len() {
        return Err(TrimError::PathTooShort {
            len: values.len(),
            n: plan.last_n(),
        });
    }
    let mut rows = Vec::with_capacity(plan.checkpoints().len());
    for segment in plan.monotone_segments() {
        rows.extend(run_plan_stream(values.iter().map(|v| Ok(*v)), &segment)?);
    }
    Ok(rows)
}
