//! Regularly varying tails `P(X > x) = L(x)·x^{-α}` with `0 < α < 1`.
//!
//! Slowly varying factors are drawn from a small closed family (constants,
//! powers of the logarithm and powers of those) so that every quantity used
//! downstream has either a closed form or a well-conditioned numeric route.
//! All evaluation happens in log space: `ln L` is what the families compute
//! natively, and arguments such as `(n/b)^{1/α}` overflow `f64` long before
//! they become uninteresting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegVarError {
    #[error("alpha must be in (0,1), got {0}")]
    Alpha(f64),
    #[error("invalid slowly varying function: {0}")]
    InvalidFamily(String),
    #[error("{what} = {value} is outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: String,
    },
    #[error("tail law rejected: {0}")]
    Rejected(String),
    #[error(
        "de Bruijn iteration did not converge after {iterations} steps \
         (last iterate {last}, fixed-point defect {residual})"
    )]
    NonConvergence {
        iterations: usize,
        last: f64,
        residual: f64,
    },
    #[error("quadrature did not reach tolerance: estimate {estimate}, error {error}")]
    Quadrature { estimate: f64, error: f64 },
}

/// Slowly varying factor `L`.
///
/// `LogPower { beta }` is `L(x) = max(ln x, 1)^β`; `PowerOf` raises another
/// family member to a real power (used for `L^{-1/α}` in the norming
/// sequence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SlowlyVaryingSpec {
    Constant { c: f64 },
    LogPower { beta: f64 },
    PowerOf {
        base: Box<SlowlyVaryingSpec>,
        exponent: f64,
    },
}

impl SlowlyVaryingSpec {
    pub fn constant(c: f64) -> Self {
        SlowlyVaryingSpec::Constant { c }
    }

    pub fn log_power(beta: f64) -> Self {
        SlowlyVaryingSpec::LogPower { beta }
    }

    pub fn power_of(base: SlowlyVaryingSpec, exponent: f64) -> Self {
        SlowlyVaryingSpec::PowerOf {
            base: Box::new(base),
            exponent,
        }
    }

    pub fn validate(&self) -> Result<(), RegVarError> {
        match self {
            SlowlyVaryingSpec::Constant { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(RegVarError::InvalidFamily(format!(
                        "constant must be positive and finite, got {c}"
                    )));
                }
            }
            SlowlyVaryingSpec::LogPower { beta } => {
                if !beta.is_finite() {
                    return Err(RegVarError::InvalidFamily(format!(
                        "log exponent must be finite, got {beta}"
                    )));
                }
            }
            SlowlyVaryingSpec::PowerOf { base, exponent } => {
                if !exponent.is_finite() {
                    return Err(RegVarError::InvalidFamily(format!(
                        "power exponent must be finite, got {exponent}"
                    )));
                }
                base.validate()?;
            }
        }
        Ok(())
    }

    /// `ln L(e^{ln_x})`.
    #[inline]
    pub fn ln_eval(&self, ln_x: f64) -> f64 {
        match self {
            SlowlyVaryingSpec::Constant { c } => c.ln(),
            SlowlyVaryingSpec::LogPower { beta } => {
                if ln_x > 1.0 {
                    beta * ln_x.ln()
                } else {
                    0.0
                }
            }
            SlowlyVaryingSpec::PowerOf { base, exponent } => exponent * base.ln_eval(ln_x),
        }
    }

    /// `L(x)` for `x > 0`.
    pub fn evaluate(&self, x: f64) -> f64 {
        self.ln_eval(x.ln()).exp()
    }

    /// The constant value when the family degenerates to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            SlowlyVaryingSpec::Constant { c } => Some(*c),
            SlowlyVaryingSpec::LogPower { beta } if *beta == 0.0 => Some(1.0),
            SlowlyVaryingSpec::LogPower { .. } => None,
            SlowlyVaryingSpec::PowerOf { base, exponent } => {
                base.as_constant().map(|c| c.powf(*exponent))
            }
        }
    }

    /// Range `(lo, hi)` of the elasticity `x·L'(x)/L(x)` over `x ≥ e^{ln_from}`.
    fn elasticity_range(&self, ln_from: f64) -> (f64, f64) {
        match self {
            SlowlyVaryingSpec::Constant { .. } => (0.0, 0.0),
            SlowlyVaryingSpec::LogPower { beta } => {
                // β/ln x for ln x > 1, zero below.
                let edge = beta / ln_from.max(1.0);
                (edge.min(0.0), edge.max(0.0))
            }
            SlowlyVaryingSpec::PowerOf { base, exponent } => {
                let (lo, hi) = base.elasticity_range(ln_from);
                let (a, b) = (exponent * lo, exponent * hi);
                (a.min(b), a.max(b))
            }
        }
    }
}

impl fmt::Display for SlowlyVaryingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlowlyVaryingSpec::Constant { c } => write!(f, "const:{c}"),
            SlowlyVaryingSpec::LogPower { beta } => write!(f, "log:{beta}"),
            SlowlyVaryingSpec::PowerOf { base, exponent } => write!(f, "pow:{exponent}:{base}"),
        }
    }
}

/// Parses `const:<c>`, `log:<beta>` and `pow:<exponent>:<inner>`.
impl FromStr for SlowlyVaryingSpec {
    type Err = RegVarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RegVarError::InvalidFamily(format!("cannot parse `{s}`"));
        let (head, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let spec = match head {
            "const" => SlowlyVaryingSpec::constant(rest.parse().map_err(|_| bad())?),
            "log" => SlowlyVaryingSpec::log_power(rest.parse().map_err(|_| bad())?),
            "pow" => {
                let (exp, inner) = rest.split_once(':').ok_or_else(bad)?;
                SlowlyVaryingSpec::power_of(inner.parse()?, exp.parse().map_err(|_| bad())?)
            }
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Default lower bound on arguments of the de Bruijn solver.
pub const CONJUGATE_X_MIN: f64 = 10.0;

/// Result of the de Bruijn fixed-point solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    /// `|L(x)·L^#(x·L(x)) − 1|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `t = 1/L(e^{ln_x}·t)` in log space and returns `ln t`.
///
/// Conjugates are only unique up to asymptotic equivalence; this is the
/// fixed point of the defining relation started from `t_0 = 1`.
pub fn conjugate_ln(
    s: &SlowlyVaryingSpec,
    ln_x: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(f64, usize), RegVarError> {
    if let Some(c) = s.as_constant() {
        return Ok((-c.ln(), 0));
    }
    let mut u = 0.0f64;
    for k in 1..=max_iter {
        let next = -s.ln_eval(ln_x + u);
        let step = (next - u).exp_m1().abs();
        u = next;
        if step <= tol {
            return Ok((u, k));
        }
    }
    let residual = (u + s.ln_eval(ln_x + u)).exp_m1().abs();
    Err(RegVarError::NonConvergence {
        iterations: max_iter,
        last: u.exp(),
        residual,
    })
}

/// de Bruijn conjugate `L^#(x)` from the iteration `t_{k+1} = 1/L(x·t_k)`.
pub fn debruijn_conjugate(
    s: &SlowlyVaryingSpec,
    x: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Conjugate, RegVarError> {
    s.validate()?;
    if !(tol > 0.0) {
        return Err(RegVarError::Domain {
            what: "tol",
            value: tol,
            domain: "(0, ∞)".into(),
        });
    }
    if !(x >= CONJUGATE_X_MIN) {
        return Err(RegVarError::Domain {
            what: "x",
            value: x,
            domain: format!("[{CONJUGATE_X_MIN}, ∞)"),
        });
    }
    let ln_x = x.ln();
    let (ln_t, iterations) = conjugate_ln(s, ln_x, max_iter, tol)?;
    let ln_l = s.ln_eval(ln_x);
    let (ln_t_at_y, _) = conjugate_ln(s, ln_x + ln_l, max_iter, tol)?;
    Ok(Conjugate {
        value: ln_t.exp(),
        residual: (ln_l + ln_t_at_y).exp_m1().abs(),
        iterations,
    })
}

/// A marginal law on `[support_left, ∞)` described through its tail.
///
/// Implemented by [`RegVaryingTail`] and by the exact digit laws of the
/// processes module.
pub trait TailLaw: Send + Sync {
    fn alpha(&self) -> f64;
    fn support_left(&self) -> f64;
    /// `P(X > x)`.
    fn tail(&self, x: f64) -> Result<f64, RegVarError>;
    /// `inf{x : P(X > x) ≤ p}` for `p ∈ (0, 1]`.
    fn tail_quantile(&self, p: f64) -> Result<f64, RegVarError>;
    /// Exact `E[X·1{X ≤ f}]`.
    fn truncated_mean(&self, f: f64) -> Result<f64, RegVarError>;

    /// Generalized inverse `F^←(u) = inf{x : F(x) ≥ u}` of `F = 1 − tail`.
    fn quantile(&self, u: f64) -> Result<f64, RegVarError> {
        if !(0.0..1.0).contains(&u) {
            return Err(RegVarError::Domain {
                what: "u",
                value: u,
                domain: "[0, 1)".into(),
            });
        }
        if u == 0.0 {
            return Ok(self.support_left());
        }
        self.tail_quantile(1.0 - u)
    }
}

/// Exact truncated moment together with its large-`f` asymptotic
/// `α/(1−α)·L(f)·f^{1−α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedMoment {
    pub exact: f64,
    pub asymptotic: f64,
}

#[derive(Deserialize)]
struct RawTail {
    alpha: f64,
    l: SlowlyVaryingSpec,
    support_left: f64,
}

/// `P(X > x) = min(1, L(x)·x^{-α})` on `[support_left, ∞)`, with an atom of
/// mass `1 − tail(support_left)` at the left edge.
///
/// Construction rejects parameters for which the tail would exceed one or
/// fail to be non-increasing on the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTail")]
pub struct RegVaryingTail {
    alpha: f64,
    l: SlowlyVaryingSpec,
    support_left: f64,
}

impl TryFrom<RawTail> for RegVaryingTail {
    type Error = RegVarError;

    fn try_from(raw: RawTail) -> Result<Self, Self::Error> {
        RegVaryingTail::with_support(raw.alpha, raw.l, raw.support_left)
    }
}

const QUANTILE_REL_TOL: f64 = 1e-12;

impl RegVaryingTail {
    /// Tail with the default support `[1, ∞)`.
    pub fn new(alpha: f64, l: SlowlyVaryingSpec) -> Result<Self, RegVarError> {
        Self::with_support(alpha, l, 1.0)
    }

    /// Pure Pareto tail `x^{-α}` on `[1, ∞)`.
    pub fn pareto(alpha: f64) -> Result<Self, RegVarError> {
        Self::new(alpha, SlowlyVaryingSpec::constant(1.0))
    }

    pub fn with_support(
        alpha: f64,
        l: SlowlyVaryingSpec,
        support_left: f64,
    ) -> Result<Self, RegVarError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RegVarError::Alpha(alpha));
        }
        l.validate()?;
        if !(support_left >= 1.0 && support_left.is_finite()) {
            return Err(RegVarError::Rejected(format!(
                "support_left must be a finite value ≥ 1, got {support_left}"
            )));
        }
        let ln_s = support_left.ln();
        let (_, hi) = l.elasticity_range(ln_s);
        if hi > alpha {
            return Err(RegVarError::Rejected(format!(
                "L(x)·x^-{alpha} with L = {l} is increasing somewhere on [{support_left}, ∞); \
                 raise support_left (admissible: {})",
                Self::admissible_support(alpha, &l)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|_| "none".into())
            )));
        }
        let raw = l.ln_eval(ln_s) - alpha * ln_s;
        if raw > 1e-15 {
            return Err(RegVarError::Rejected(format!(
                "tail at support_left = {support_left} is {} > 1",
                raw.exp()
            )));
        }
        Ok(Self {
            alpha,
            l,
            support_left,
        })
    }

    /// Smallest `s ≥ 1` for which `with_support(alpha, l, s)` succeeds.
    pub fn admissible_support(alpha: f64, l: &SlowlyVaryingSpec) -> Result<f64, RegVarError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RegVarError::Alpha(alpha));
        }
        l.validate()?;
        let ok = |ln_s: f64| {
            l.elasticity_range(ln_s).1 <= alpha && l.ln_eval(ln_s) - alpha * ln_s <= 0.0
        };
        if ok(0.0) {
            return Ok(1.0);
        }
        let mut hi = 1.0f64;
        while !ok(hi) {
            hi *= 2.0;
            if hi > 700.0 {
                return Err(RegVarError::Rejected(format!(
                    "no admissible support below e^700 for L = {l}, alpha = {alpha}"
                )));
            }
        }
        let mut lo = 0.0f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi.max(1.0) {
                break;
            }
        }
        Ok(hi.exp())
    }

    pub fn slowly_varying(&self) -> &SlowlyVaryingSpec {
        &self.l
    }

    /// `ln P(X > e^{ln_x})` without the clamp at one.
    #[inline]
    fn ln_raw_tail(&self, ln_x: f64) -> f64 {
        self.l.ln_eval(ln_x) - self.alpha * ln_x
    }

    fn check_support(&self, what: &'static str, x: f64) -> Result<(), RegVarError> {
        if x >= self.support_left {
            Ok(())
        } else {
            Err(RegVarError::Domain {
                what,
                value: x,
                domain: format!("[{}, ∞)", self.support_left),
            })
        }
    }

    /// `E[X·1{X ≤ f}]` exactly, with the asymptotic comparison value.
    pub fn truncated_first_moment(&self, f: f64) -> Result<TruncatedMoment, RegVarError> {
        self.check_support("f", f)?;
        let exact = self.truncated_mean(f)?;
        let a = self.alpha;
        let asymptotic = if f.is_infinite() {
            f64::INFINITY
        } else {
            a / (1.0 - a) * (self.l.ln_eval(f.ln()) + (1.0 - a) * f.ln()).exp()
        };
        Ok(TruncatedMoment { exact, asymptotic })
    }

    /// `∫_{support_left}^{f} P(X > x) dx` by double-exponential quadrature in
    /// `t = ln x`, split where `LogPower` has its kink at `x = e`.
    fn integrated_tail(&self, f: f64) -> Result<f64, RegVarError> {
        let a = self.support_left.ln();
        let b = f.ln();
        let integrand = |t: f64| (self.ln_raw_tail(t) + t).exp().min(t.exp());
        let scale = (f * self.tail(f)?).max(1.0);
        let target = (1e-10f64).max(1e-13 * scale);
        let mut pieces = vec![a];
        if a < 1.0 && b > 1.0 {
            pieces.push(1.0);
        }
        pieces.push(b);
        let mut total = 0.0;
        for w in pieces.windows(2) {
            let out = quadrature::integrate(integrand, w[0], w[1], target / 2.0);
            if !(out.error_estimate <= target) || !out.integral.is_finite() {
                return Err(RegVarError::Quadrature {
                    estimate: out.integral,
                    error: out.error_estimate,
                });
            }
            total += out.integral;
        }
        Ok(total)
    }
}

impl TailLaw for RegVaryingTail {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn support_left(&self) -> f64 {
        self.support_left
    }

    fn tail(&self, x: f64) -> Result<f64, RegVarError> {
        self.check_support("x", x)?;
        if x.is_infinite() {
            return Ok(0.0);
        }
        Ok(self.ln_raw_tail(x.ln()).exp().min(1.0))
    }

    fn tail_quantile(&self, p: f64) -> Result<f64, RegVarError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(RegVarError::Domain {
                what: "p",
                value: p,
                domain: "(0, 1]".into(),
            });
        }
        let s = self.support_left;
        let ln_p = p.ln();
        let ln_s = s.ln();
        if self.ln_raw_tail(ln_s) <= ln_p {
            return Ok(s);
        }
        if let Some(c) = self.l.as_constant() {
            return Ok(((c.ln() - ln_p) / self.alpha).exp().max(s));
        }
        // Bisection in ln x: lo has tail > p, hi has tail ≤ p.
        let mut lo = ln_s;
        let mut width = 1.0;
        let mut hi = ln_s + width;
        while self.ln_raw_tail(hi) > ln_p {
            lo = hi;
            width *= 2.0;
            hi = ln_s + width;
        }
        while hi - lo > QUANTILE_REL_TOL * 0.5 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.ln_raw_tail(mid) > ln_p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi.exp())
    }

    fn truncated_mean(&self, f: f64) -> Result<f64, RegVarError> {
        self.check_support("f", f)?;
        let s = self.support_left;
        let a = self.alpha;
        if f.is_infinite() {
            return Ok(f64::INFINITY);
        }
        // E[X 1{X ≤ f}] = s − f·tail(f) + ∫_s^f tail(x) dx, atom at s included.
        if let Some(c) = self.l.as_constant() {
            let fp = f.powf(1.0 - a);
            let sp = s.powf(1.0 - a);
            let exact = s * (1.0 - c * s.powf(-a)) + c * a / (1.0 - a) * (fp - sp);
            return Ok(exact.max(0.0));
        }
        let integral = self.integrated_tail(f)?;
        Ok((s - f * self.tail(f)? + integral).max(0.0))
    }
}
