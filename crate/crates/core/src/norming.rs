//! Deterministic sequences: trimming schedules `b_n`, `ζ_n = b_n^{2/3}`, the
//! quantile threshold `g_n = F^←(1 − (b_n − ζ_n)/n)` and the norming sequence
//!
//! ```text
//! d_n = α/(1−α) · n^{1/α} · b_n^{1−1/α} · (L^{−1/α})^#((n/b_n)^{1/α}).
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regvar::{conjugate_ln, RegVarError, RegVaryingTail, SlowlyVaryingSpec, TailLaw, TruncatedMoment};

pub const CONJUGATE_MAX_ITER: usize = 10_000;
pub const CONJUGATE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormingError {
    #[error("schedule error at n = {n}: {reason}")]
    Schedule { n: u64, reason: String },
    #[error("at n = {n}: {source}")]
    Numeric { n: u64, source: RegVarError },
    #[error("{} row(s) failed; first: {}", .0.len(), .0[0])]
    Rows(Vec<NormingError>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TrimmingSchedule {
    /// `b_n = ⌈n^θ⌉`.
    PowerRule { theta: f64 },
    /// Pairs `(n, b_n)`; only the listed `n` are defined.
    Explicit { table: Vec<(u64, u64)> },
}

impl TrimmingSchedule {
    pub fn power(theta: f64) -> Self {
        TrimmingSchedule::PowerRule { theta }
    }

    pub fn validate(&self) -> Result<(), NormingError> {
        match self {
            TrimmingSchedule::PowerRule { theta } if !(*theta > 0.0 && *theta < 1.0) => {
                Err(NormingError::Schedule {
                    n: 0,
                    reason: format!("theta must be in (0, 1), got {theta}"),
                })
            }
            _ => Ok(()),
        }
    }

    pub fn b(&self, n: u64) -> Result<u64, NormingError> {
        match self {
            TrimmingSchedule::PowerRule { theta } => {
                self.validate()?;
                let raw = (n as f64).powf(*theta);
                // guard against n^θ landing a hair above an integer
                let near = raw.round();
                let b = if (raw - near).abs() <= 1e-9 * near.max(1.0) {
                    near
                } else {
                    raw.ceil()
                };
                Ok(b as u64)
            }
            TrimmingSchedule::Explicit { table } => table
                .iter()
                .find(|(m, _)| *m == n)
                .map(|(_, b)| *b)
                .ok_or_else(|| NormingError::Schedule {
                    n,
                    reason: "n not listed in explicit schedule".into(),
                }),
        }
    }

    /// Checks `1 ≤ b_n < n` at every checkpoint, and numerically that `b_n`
    /// grows while `b_n/n` shrinks along the grid.
    pub fn check_grid(&self, checkpoints: &[u64]) -> Result<Vec<u64>, NormingError> {
        self.validate()?;
        let mut out = Vec::with_capacity(checkpoints.len());
        for &n in checkpoints {
            let b = self.b(n)?;
            if b == 0 {
                return Err(NormingError::Schedule {
                    n,
                    reason: "b_n = 0 violates b_n → ∞".into(),
                });
            }
            if b >= n {
                return Err(NormingError::Schedule {
                    n,
                    reason: format!("b_n = {b} violates b_n < n"),
                });
            }
            out.push(b);
        }
        for (w, pair) in checkpoints.windows(2).zip(out.windows(2)) {
            if pair[1] < pair[0] {
                return Err(NormingError::Schedule {
                    n: w[1],
                    reason: format!("b_n decreases from {} to {}", pair[0], pair[1]),
                });
            }
            if pair[1] as f64 / w[1] as f64 > pair[0] as f64 / w[0] as f64 {
                return Err(NormingError::Schedule {
                    n: w[1],
                    reason: "b_n/n increases along the grid".into(),
                });
            }
        }
        Ok(out)
    }
}

impl fmt::Display for TrimmingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrimmingSchedule::PowerRule { theta } => write!(f, "pow:{theta}"),
            TrimmingSchedule::Explicit { table } => {
                write!(f, "explicit:")?;
                for (i, (n, b)) in table.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{n}={b}")?;
                }
                Ok(())
            }
        }
    }
}

/// `pow:θ` or `explicit:n=b,n=b,…`.
impl FromStr for TrimmingSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(t) = s.strip_prefix("pow:") {
            let theta: f64 = t.parse().map_err(|_| format!("bad exponent `{t}`"))?;
            let out = TrimmingSchedule::power(theta);
            out.validate().map_err(|e| e.to_string())?;
            return Ok(out);
        }
        if let Some(t) = s.strip_prefix("explicit:") {
            let table = t
                .split(',')
                .map(|pair| {
                    let (n, b) = pair.split_once('=').ok_or(format!("bad pair `{pair}`"))?;
                    let n = parse_count(n)?;
                    let b = parse_count(b)?;
                    Ok((n, b))
                })
                .collect::<Result<Vec<_>, String>>()?;
            return Ok(TrimmingSchedule::Explicit { table });
        }
        Err(format!("unknown schedule `{s}` (expected pow:θ or explicit:n=b,…)"))
    }
}

/// Parses a count written as an integer or in scientific notation (`1e4`).
pub fn parse_count(s: &str) -> Result<u64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = s.parse().map_err(|_| format!("bad count `{s}`"))?;
    if v >= 0.0 && v.fract() == 0.0 && v < 1.8e19 {
        Ok(v as u64)
    } else {
        Err(format!("`{s}` is not a non-negative integer"))
    }
}

pub fn zeta(b: u64) -> f64 {
    let bf = b as f64;
    let z = bf.cbrt();
    let r = (z * z).round();
    // exact for perfect cubes
    if (r * r * r - bf * bf).abs() < 0.5 {
        r
    } else {
        z * z
    }
}

/// `F^←(1 − (b − ζ)/n)`.
pub fn g_threshold(tail: &dyn TailLaw, n: u64, b: u64) -> Result<f64, NormingError> {
    let gap = b as f64 - zeta(b);
    if !(gap > 0.0) {
        return Err(NormingError::Schedule {
            n,
            reason: format!("b − b^(2/3) must be positive, got b = {b}"),
        });
    }
    let p = gap / n as f64;
    if !(p < 1.0) {
        return Err(NormingError::Schedule {
            n,
            reason: format!("(b − b^(2/3))/n = {p} must be below 1"),
        });
    }
    tail.tail_quantile(p)
        .map_err(|source| NormingError::Numeric { n, source })
}

/// `ln d_n`.
pub fn ln_d_norming(alpha: f64, l: &SlowlyVaryingSpec, n: u64, b: u64) -> Result<f64, NormingError> {
    if !(b >= 1 && b < n) {
        return Err(NormingError::Schedule {
            n,
            reason: format!("need 1 ≤ b < n, got b = {b}"),
        });
    }
    let inv = 1.0 / alpha;
    let ln_n = (n as f64).ln();
    let ln_b = (b as f64).ln();
    let family = SlowlyVaryingSpec::power_of(l.clone(), -inv);
    let (ln_conj, _) = conjugate_ln(&family, inv * (ln_n - ln_b), CONJUGATE_MAX_ITER, CONJUGATE_TOL)
        .map_err(|source| NormingError::Numeric { n, source })?;
    Ok((alpha / (1.0 - alpha)).ln() + inv * ln_n + (1.0 - inv) * ln_b + ln_conj)
}

pub fn d_norming(tail: &RegVaryingTail, n: u64, b: u64) -> Result<f64, NormingError> {
    let ln_d = ln_d_norming(tail.alpha(), tail.slowly_varying(), n, b)?;
    let d = ln_d.exp();
    if d.is_finite() && d > 0.0 {
        Ok(d)
    } else {
        Err(NormingError::Numeric {
            n,
            source: RegVarError::Domain {
                what: "ln d_n",
                value: ln_d,
                domain: "representable range".into(),
            },
        })
    }
}

/// `n·E[X; X ≤ f]` and `n·α/(1−α)·L(f)·f^{1−α}`.
pub fn expected_truncated_sum(tail: &RegVaryingTail, n: u64, f: f64) -> Result<TruncatedMoment, RegVarError> {
    let m = tail.truncated_first_moment(f)?;
    let nf = n as f64;
    Ok(TruncatedMoment {
        exact: nf * m.exact,
        asymptotic: nf * m.asymptotic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormingRow {
    pub n: u64,
    pub b: u64,
    pub zeta: f64,
    pub g: f64,
    pub d: f64,
    /// `(d_n/g_n) / (α/(1−α)·b_n)`.
    pub ratio_dg_over_ab: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormingTable {
    pub rows: Vec<NormingRow>,
}

pub fn norming_row(tail: &RegVaryingTail, n: u64, b: u64) -> Result<NormingRow, NormingError> {
    let d = d_norming(tail, n, b)?;
    let g = g_threshold(tail, n, b)?;
    let a = tail.alpha();
    Ok(NormingRow {
        n,
        b,
        zeta: zeta(b),
        g,
        d,
        ratio_dg_over_ab: d / g / (a / (1.0 - a) * b as f64),
    })
}

pub fn norming_table(
    tail: &RegVaryingTail,
    schedule: &TrimmingSchedule,
    checkpoints: &[u64],
) -> Result<NormingTable, NormingError> {
    let mut rows = Vec::with_capacity(checkpoints.len());
    let mut errors = Vec::new();
    for &n in checkpoints {
        match schedule.b(n).and_then(|b| norming_row(tail, n, b)) {
            Ok(r) => rows.push(r),
            Err(e) => errors.push(e),
        }
    }
    if errors.is_empty() {
        Ok(NormingTable { rows })
    } else {
        Err(NormingError::Rows(errors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        ((a - b) / b).abs() <= rel
    }

    #[test]
    fn zeta_examples() {
        assert_eq!(zeta(8), 4.0);
        assert_eq!(zeta(1), 1.0);
        assert_eq!(zeta(1000), 100.0);
    }

    #[test]
    fn g_examples() {
        let t = RegVaryingTail::pareto(0.5).unwrap();
        let g = g_threshold(&t, 10_000, 100).unwrap();
        let gap = 100.0 - 100f64.powf(2.0 / 3.0);
        assert!(close(g, (gap / 1e4).powi(-2), 1e-12));
        assert!(close(g, 1.6245e4, 1e-4));
        assert!(close(g_threshold(&t, 10_000, 8).unwrap(), 6.25e6, 1e-12));
        assert!(g_threshold(&t, 10_000, 1).is_err());
    }

    #[test]
    fn d_examples() {
        let t = RegVaryingTail::pareto(0.5).unwrap();
        assert!(close(d_norming(&t, 10_000, 100).unwrap(), 1e6, 1e-12));
        assert!(close(d_norming(&t, 1_000_000, 1000).unwrap(), 1e9, 1e-12));
        let t4 = RegVaryingTail::with_support(0.5, SlowlyVaryingSpec::constant(4.0), 16.0).unwrap();
        assert!(close(d_norming(&t4, 10_000, 100).unwrap(), 1.6e7, 1e-12));
        assert!(d_norming(&t, 10, 10).is_err());
    }

    #[test]
    fn truncated_sum_examples() {
        let t = RegVaryingTail::pareto(0.5).unwrap();
        let m = expected_truncated_sum(&t, 1000, 100.0).unwrap();
        assert!(close(m.exact, 9000.0, 1e-12));
        assert!(close(m.asymptotic, 1e4, 1e-12));
        assert!(expected_truncated_sum(&t, 1000, 1.0).unwrap().exact.abs() < 1e-12);
        let m = expected_truncated_sum(&t, 1000, 1e6).unwrap();
        assert!(close(m.exact / m.asymptotic, 0.999, 1e-12));
    }

    #[test]
    fn table_examples() {
        let t = RegVaryingTail::pareto(0.5).unwrap();
        let sched = TrimmingSchedule::Explicit {
            table: vec![(10_000, 100)],
        };
        let tab = norming_table(&t, &sched, &[10_000]).unwrap();
        assert_eq!(tab.rows.len(), 1);
        assert!(close(tab.rows[0].d, 1e6, 1e-12));
        assert!(close(tab.rows[0].ratio_dg_over_ab, 0.6156, 1e-3));
        // closed form (1 − b^{-1/3})^{1/α}
        assert!(close(tab.rows[0].ratio_dg_over_ab, (1.0 - 100f64.powf(-1.0 / 3.0)).powi(2), 1e-12));
        assert!(norming_table(&t, &sched, &[]).unwrap().rows.is_empty());
        assert!(matches!(norming_table(&t, &sched, &[5]), Err(NormingError::Rows(_))));
    }

    #[test]
    fn power_rule_ceiling() {
        let s = TrimmingSchedule::power(0.5);
        assert_eq!(s.b(10_000).unwrap(), 100);
        assert_eq!(s.b(10_001).unwrap(), 101);
        assert_eq!(TrimmingSchedule::power(0.7).b(1000).unwrap(), 126);
        assert!("pow:1.2".parse::<TrimmingSchedule>().is_err());
        let e: TrimmingSchedule = "explicit:1e4=8".parse().unwrap();
        assert_eq!(e.b(10_000).unwrap(), 8);
        assert_eq!(e.to_string(), "explicit:10000=8");
    }

    #[test]
    fn forced_zero_trimming_is_refused() {
        let s = TrimmingSchedule::Explicit {
            table: vec![(1000, 0)],
        };
        assert!(s.check_grid(&[1000]).is_err());
    }
}
