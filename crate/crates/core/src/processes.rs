//! Stationary observable processes `(χ∘T^{k-1})_{k≥1}` sampled under their
//! invariant measure, and the static checklist for step observables on
//! countable-partition expanding maps.
//!
//! Exact samplers:
//!
//! - i.i.d. draws from a [`RegVaryingTail`] by inversion;
//! - the full-branch affine map on `I_n = [1/(n+1), 1/n)` with slopes
//!   `n(n+1)`, which preserves Lebesgue measure and has i.i.d. digits with
//!   `P(d = n) = 1/(n(n+1))`; the observable is `d^{1/α}`;
//! - the doubling map with `χ(x) = x^{-γ}`, driven by the fair-bit expansion
//!   of a Lebesgue-random point (native float iteration of `2x mod 1`
//!   collapses to zero within 53 steps).
//!
//! Generic maps only run in diagnostic float mode ([`orbit_float`]).

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{fmt_sci, CompensatedSum};
use crate::regvar::{RegVarError, RegVaryingTail, TailLaw};
use crate::rng::{open_unit, SeedRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error("invalid process specification: {0}")]
    InvalidSpec(String),
    #[error(
        "bit window overflow at index {index}: {leading_zeros} leading zero bits \
         reached max_window_bits = {max_window_bits}"
    )]
    PrecisionOverflow {
        index: u64,
        leading_zeros: u32,
        max_window_bits: u32,
    },
    #[error("observable overflowed f64 at index {index} (log2 value {log2_value})")]
    ValueOverflow { index: u64, log2_value: f64 },
    #[error("float orbit left the partition at index {index} (x = {x})")]
    OrbitDegenerate { index: u64, x: f64 },
    #[error("path too short: need at least {needed} values, have {have}")]
    PathTooShort { needed: usize, have: usize },
    #[error(transparent)]
    Tail(#[from] RegVarError),
    #[error("malformed path dump: {0}")]
    Parse(String),
}

pub const DEFAULT_WINDOW_BITS: u32 = 64;
pub const DEFAULT_MAX_WINDOW_BITS: u32 = 512;
pub const MAX_WINDOW_LIMIT: u32 = 1024;
pub const DEFAULT_BURN_IN: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    IidRegVarying {
        tail: RegVaryingTail,
    },
    LurothStep {
        alpha: f64,
    },
    DoublingPareto {
        gamma: f64,
        window_bits: u32,
        max_window_bits: u32,
    },
    FloatOrbit {
        map: PiecewiseMapSpec,
        observable: StepObservable,
        burn_in: u64,
    },
}

impl ProcessSpec {
    pub fn iid(tail: RegVaryingTail) -> Self {
        ProcessSpec::IidRegVarying { tail }
    }

    pub fn luroth(alpha: f64) -> Self {
        ProcessSpec::LurothStep { alpha }
    }

    pub fn doubling(gamma: f64) -> Self {
        ProcessSpec::DoublingPareto {
            gamma,
            window_bits: DEFAULT_WINDOW_BITS,
            max_window_bits: DEFAULT_MAX_WINDOW_BITS,
        }
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        match self {
            ProcessSpec::IidRegVarying { .. } => Ok(()),
            ProcessSpec::LurothStep { alpha } => {
                if *alpha > 0.0 && *alpha < 1.0 {
                    Ok(())
                } else {
                    Err(RegVarError::Alpha(*alpha).into())
                }
            }
            ProcessSpec::DoublingPareto {
                gamma,
                window_bits,
                max_window_bits,
            } => {
                if !(*gamma > 1.0 && gamma.is_finite()) {
                    return Err(ProcessError::InvalidSpec(format!(
                        "gamma must be > 1, got {gamma}"
                    )));
                }
                if !(1..=64).contains(window_bits)
                    || window_bits > max_window_bits
                    || *max_window_bits > MAX_WINDOW_LIMIT
                {
                    return Err(ProcessError::InvalidSpec(format!(
                        "need 1 ≤ window_bits ≤ 64, window_bits ≤ max_window_bits ≤ \
                         {MAX_WINDOW_LIMIT}; got {window_bits}, {max_window_bits}"
                    )));
                }
                Ok(())
            }
            ProcessSpec::FloatOrbit {
                map, observable, ..
            } => {
                map.validate()?;
                observable.validate_for(map)
            }
        }
    }

    /// The exact marginal law of one coordinate, where one is known.
    pub fn marginal(&self) -> Option<Box<dyn TailLaw>> {
        match self {
            ProcessSpec::IidRegVarying { tail } => Some(Box::new(tail.clone())),
            ProcessSpec::LurothStep { alpha } => Some(Box::new(LurothTail { alpha: *alpha })),
            ProcessSpec::DoublingPareto { gamma, .. } => {
                RegVaryingTail::pareto(1.0 / gamma).ok().map(|t| Box::new(t) as Box<dyn TailLaw>)
            }
            ProcessSpec::FloatOrbit { .. } => None,
        }
    }

    /// Regularly varying tail in the asymptotic equivalence class of the
    /// marginal, used for the norming sequence.
    pub fn norming_tail(&self) -> Option<RegVaryingTail> {
        match self {
            ProcessSpec::IidRegVarying { tail } => Some(tail.clone()),
            ProcessSpec::LurothStep { alpha } => RegVaryingTail::pareto(*alpha).ok(),
            ProcessSpec::DoublingPareto { gamma, .. } => RegVaryingTail::pareto(1.0 / gamma).ok(),
            ProcessSpec::FloatOrbit { .. } => None,
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            ProcessSpec::IidRegVarying { .. } => "iid",
            ProcessSpec::LurothStep { .. } => "luroth",
            ProcessSpec::DoublingPareto { .. } => "doubling-pareto",
            ProcessSpec::FloatOrbit { .. } => "float-orbit",
        }
    }

    /// Streaming generator for the given seed.
    pub fn stream(&self, seed: SeedRecord) -> Result<ProcessStream, ProcessError> {
        self.validate()?;
        let rng = seed.rng();
        let inner = match self {
            ProcessSpec::IidRegVarying { tail } => {
                let closed_form = tail.slowly_varying().as_constant().map(|c| {
                    let inv_alpha = 1.0 / tail.alpha();
                    (c.ln() * inv_alpha, inv_alpha, tail.support_left())
                });
                StreamKind::Iid {
                    tail: tail.clone(),
                    closed_form,
                    rng,
                }
            }
            ProcessSpec::LurothStep { alpha } => StreamKind::Luroth {
                inv_alpha: 1.0 / alpha,
                rng,
            },
            ProcessSpec::DoublingPareto {
                gamma,
                window_bits,
                max_window_bits,
            } => StreamKind::Doubling(DoublingStream::new(
                RngWords(rng),
                *gamma,
                *window_bits,
                *max_window_bits,
            )),
            ProcessSpec::FloatOrbit {
                map,
                observable,
                burn_in,
            } => {
                let mut rng = rng;
                let mut x = 1.0 - open_unit(&mut rng);
                for _ in 0..*burn_in {
                    x = map.apply(x);
                }
                StreamKind::Float {
                    map: map.clone(),
                    observable: observable.clone(),
                    x,
                }
            }
        };
        Ok(ProcessStream { inner, index: 0 })
    }
}

/// Lüroth digit from a uniform draw on `(0, 1]`: `d = ⌊1/p⌋`, so that
/// `P(d = n) = 1/n − 1/(n+1)`.
#[inline]
pub fn luroth_digit(p: f64) -> u64 {
    let mut d = (1.0 / p).floor() as u64;
    if ((d + 1) as f64) * p <= 1.0 {
        d += 1;
    } else if d > 1 && (d as f64) * p > 1.0 {
        d -= 1;
    }
    d.max(1)
}

/// Observable value `d^{1/α}` on the digit cell `I_d`.
#[inline]
pub fn luroth_value(digit: u64, inv_alpha: f64) -> f64 {
    (digit as f64).powf(inv_alpha)
}

/// Exact law of `d^{1/α}` with `P(d = n) = 1/(n(n+1))`:
/// `P(V > x) = 1/(⌊x^α⌋ + 1)` for `x ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LurothTail {
    pub alpha: f64,
}

impl LurothTail {
    /// Number of digits `n` with `n^{1/α} ≤ x`.
    fn digits_at_most(&self, x: f64) -> u64 {
        if x < 1.0 {
            return 0;
        }
        let inv = 1.0 / self.alpha;
        let mut n = x.powf(self.alpha).floor() as u64;
        while luroth_value(n + 1, inv) <= x {
            n += 1;
        }
        while n > 0 && luroth_value(n, inv) > x {
            n -= 1;
        }
        n
    }
}

impl TailLaw for LurothTail {
    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn support_left(&self) -> f64 {
        1.0
    }

    fn tail(&self, x: f64) -> Result<f64, RegVarError> {
        if x.is_nan() {
            return Err(RegVarError::Domain {
                what: "x",
                value: x,
                domain: "reals".into(),
            });
        }
        if x.is_infinite() {
            return Ok(0.0);
        }
        Ok(1.0 / (self.digits_at_most(x) as f64 + 1.0))
    }

    fn tail_quantile(&self, p: f64) -> Result<f64, RegVarError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(RegVarError::Domain {
                what: "p",
                value: p,
                domain: "(0, 1]".into(),
            });
        }
        // smallest N with 1/(N+1) ≤ p
        let mut k = (1.0 / p).ceil() as u64;
        if k > 1 && 1.0 / ((k - 1) as f64) <= p {
            k -= 1;
        }
        let n = k.saturating_sub(1);
        if n == 0 {
            return Ok(1.0);
        }
        Ok(luroth_value(n, 1.0 / self.alpha))
    }

    fn truncated_mean(&self, f: f64) -> Result<f64, RegVarError> {
        if f.is_infinite() {
            return Ok(f64::INFINITY);
        }
        let inv = 1.0 / self.alpha;
        let top = self.digits_at_most(f);
        if top > 100_000_000 {
            return Err(RegVarError::Domain {
                what: "f",
                value: f,
                domain: "values with at most 1e8 digit cells below".into(),
            });
        }
        Ok((1..=top)
            .map(|d| luroth_value(d, inv) / (d as f64 * (d + 1) as f64))
            .collect::<CompensatedSum>()
            .value())
    }
}

/// Source of 64-bit words for the doubling-map bit expansion, most
/// significant bit first.
pub trait WordSource {
    fn next_word(&mut self) -> u64;
}

pub struct RngWords<R>(pub R);

impl<R: RngCore> WordSource for RngWords<R> {
    #[inline]
    fn next_word(&mut self) -> u64 {
        self.0.next_u64()
    }
}

/// Explicit bit prefix followed by zeros.
#[derive(Debug, Clone)]
pub struct FixedBits {
    words: Vec<u64>,
    next: usize,
}

impl FixedBits {
    pub fn new(bits: &[bool]) -> Self {
        let words = bits
            .chunks(64)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |w, (i, &b)| w | ((b as u64) << (63 - i)))
            })
            .collect();
        Self { words, next: 0 }
    }
}

impl WordSource for FixedBits {
    fn next_word(&mut self) -> u64 {
        let w = self.words.get(self.next).copied().unwrap_or(0);
        self.next += 1;
        w
    }
}

/// Values `x_k^{-γ}` with `x_k = 0.b_k b_{k+1}…` read through a bit window.
///
/// The exponent of `x_k` is the position of the first one-bit at or after
/// `k` (searched up to `max_window_bits`), the mantissa is the `window_bits`
/// bits starting there, and `χ` is formed in log2 space.
pub struct DoublingStream<S> {
    source: S,
    words: VecDeque<u64>,
    /// Bit index of the most significant bit of `words[0]`.
    base: u64,
    pos: u64,
    gamma: f64,
    window_bits: u32,
    max_window_bits: u32,
}

impl<S: WordSource> DoublingStream<S> {
    pub fn new(source: S, gamma: f64, window_bits: u32, max_window_bits: u32) -> Self {
        Self {
            source,
            words: VecDeque::new(),
            base: 0,
            pos: 0,
            gamma,
            window_bits,
            max_window_bits,
        }
    }

    #[inline]
    fn word(&mut self, idx: usize) -> u64 {
        while self.words.len() <= idx {
            let w = self.source.next_word();
            self.words.push_back(w);
        }
        self.words[idx]
    }

    /// 64 bits starting at absolute bit index `i ≥ base`.
    #[inline]
    fn read64(&mut self, i: u64) -> u64 {
        let rel = i - self.base;
        let idx = (rel / 64) as usize;
        let shift = (rel % 64) as u32;
        let hi = self.word(idx);
        if shift == 0 {
            hi
        } else {
            let lo = self.word(idx + 1);
            (hi << shift) | (lo >> (64 - shift))
        }
    }

    /// `log2 x_k` for the next index, advancing the stream.
    pub fn next_log2_point(&mut self) -> Result<f64, ProcessError> {
        let k = self.pos;
        let mut zeros: u32 = 0;
        loop {
            let w = self.read64(k + zeros as u64);
            if w != 0 {
                zeros += w.leading_zeros();
                break;
            }
            zeros += 64;
            if zeros >= self.max_window_bits {
                break;
            }
        }
        if zeros >= self.max_window_bits {
            return Err(ProcessError::PrecisionOverflow {
                index: k,
                leading_zeros: zeros.min(self.max_window_bits),
                max_window_bits: self.max_window_bits,
            });
        }
        let mantissa = self.read64(k + zeros as u64) >> (64 - self.window_bits);
        self.pos += 1;
        while self.pos - self.base >= 64 && !self.words.is_empty() {
            self.words.pop_front();
            self.base += 64;
        }
        Ok((mantissa as f64).log2() - (zeros + self.window_bits) as f64)
    }

    pub fn next_value(&mut self) -> Result<f64, ProcessError> {
        let index = self.pos;
        let log2_value = -self.gamma * self.next_log2_point()?;
        let v = log2_value.exp2();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ProcessError::ValueOverflow { index, log2_value })
        }
    }
}

enum StreamKind {
    Iid {
        tail: RegVaryingTail,
        /// `(ln c / α, 1/α, support_left)` for constant `L`.
        closed_form: Option<(f64, f64, f64)>,
        rng: ChaCha8Rng,
    },
    Luroth {
        inv_alpha: f64,
        rng: ChaCha8Rng,
    },
    Doubling(DoublingStream<RngWords<ChaCha8Rng>>),
    Float {
        map: PiecewiseMapSpec,
        observable: StepObservable,
        x: f64,
    },
}

/// Infinite iterator over process values.
pub struct ProcessStream {
    inner: StreamKind,
    index: u64,
}

impl Iterator for ProcessStream {
    type Item = Result<f64, ProcessError>;

    #[inline]
    fn next(&mut self) -> Option<Self::Item> {
        let index = self.index;
        self.index += 1;
        let out = match &mut self.inner {
            StreamKind::Iid {
                tail,
                closed_form,
                rng,
            } => {
                let p = open_unit(rng);
                match closed_form {
                    Some((ln_c_over_a, inv_a, s)) => {
                        Ok((*ln_c_over_a - p.ln() * *inv_a).exp().max(*s))
                    }
                    None => tail.tail_quantile(p).map_err(ProcessError::from),
                }
            }
            StreamKind::Luroth { inv_alpha, rng } => {
                Ok(luroth_value(luroth_digit(open_unit(rng)), *inv_alpha))
            }
            StreamKind::Doubling(s) => s.next_value(),
            StreamKind::Float { map, observable, x } => {
                let here = *x;
                *x = map.apply(here);
                match map.locate(here).and_then(|label| observable.value(label)) {
                    Some(v) => Ok(v),
                    None => Err(ProcessError::OrbitDegenerate { index, x: here }),
                }
            }
        };
        Some(out)
    }
}

/// Inversion sample for the i.i.d. process: `X = F^←(u)`.
pub fn iid_value(tail: &RegVaryingTail, u: f64) -> Result<f64, RegVarError> {
    tail.quantile(u)
}

/// Generated summands of a Birkhoff sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub values: Vec<f64>,
    pub seed: SeedRecord,
    pub spec: ProcessSpec,
}

pub fn sample_path(spec: &ProcessSpec, n: usize, seed: u64) -> Result<SamplePath, ProcessError> {
    sample_path_with(spec, n, SeedRecord::new(seed, 0))
}

pub fn sample_path_with(
    spec: &ProcessSpec,
    n: usize,
    seed: SeedRecord,
) -> Result<SamplePath, ProcessError> {
    if n == 0 {
        return Err(ProcessError::InvalidSpec("path length must be ≥ 1".into()));
    }
    let values = spec.stream(seed)?.take(n).collect::<Result<Vec<_>, _>>()?;
    Ok(SamplePath {
        values,
        seed,
        spec: spec.clone(),
    })
}

const PATH_HEADER: &str = "# trimlab-path v1";

/// Writes one value per line after a `# trimlab-path v1 spec=<json> seed=<u64>`
/// header.
pub fn write_path<W: Write>(path: &SamplePath, mut out: W) -> std::io::Result<()> {
    let spec = serde_json::to_string(&path.spec).map_err(std::io::Error::other)?;
    writeln!(
        out,
        "{PATH_HEADER} spec={spec} seed={} stream={}",
        path.seed.master, path.seed.stream
    )?;
    for v in &path.values {
        writeln!(out, "{}", fmt_sci(*v))?;
    }
    Ok(())
}

pub fn read_path<R: BufRead>(input: R) -> Result<SamplePath, ProcessError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| ProcessError::Parse("empty input".into()))?
        .map_err(|e| ProcessError::Parse(e.to_string()))?;
    let rest = header
        .strip_prefix(PATH_HEADER)
        .and_then(|r| r.strip_prefix(" spec="))
        .ok_or_else(|| ProcessError::Parse("missing header".into()))?;
    let (spec_json, seeds) = rest
        .rsplit_once(" seed=")
        .ok_or_else(|| ProcessError::Parse("missing seed".into()))?;
    let (master, stream) = match seeds.split_once(" stream=") {
        Some((m, s)) => (m, s),
        None => (seeds, "0"),
    };
    let spec: ProcessSpec =
        serde_json::from_str(spec_json).map_err(|e| ProcessError::Parse(e.to_string()))?;
    let seed = SeedRecord::new(
        master.trim().parse().map_err(|_| ProcessError::Parse("bad seed".into()))?,
        stream.trim().parse().map_err(|_| ProcessError::Parse("bad stream".into()))?,
    );
    let mut values = Vec::new();
    for line in lines {
        let line = line.map_err(|e| ProcessError::Parse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        values.push(
            line.parse::<f64>()
                .map_err(|_| ProcessError::Parse(format!("bad value `{line}`")))?,
        );
    }
    Ok(SamplePath { values, seed, spec })
}

/// Affine branch `x ↦ slope·(x − left)` on `[left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineBranch {
    pub left: f64,
    pub right: f64,
    pub slope: f64,
}

impl AffineBranch {
    fn image(&self) -> (f64, f64) {
        let end = self.slope * (self.right - self.left);
        (end.min(0.0), end.max(0.0))
    }
}

/// Analytic continuation of the partition towards zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CountableTail {
    /// Cells `I_n = [1/(n+1), 1/n)` for `n ≥ first_index`, slope `n(n+1)`.
    Luroth { first_index: u64 },
}

/// Piecewise affine interval map on `[0, 1)`.
///
/// Cell labels are `1, 2, …` in list order, continuing into the countable
/// tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseMapSpec {
    pub cells: Vec<AffineBranch>,
    pub tail: Option<CountableTail>,
    pub expansion_floor: f64,
}

const PARTITION_TOL: f64 = 1e-12;

impl PiecewiseMapSpec {
    pub fn doubling() -> Self {
        Self {
            cells: vec![
                AffineBranch {
                    left: 0.0,
                    right: 0.5,
                    slope: 2.0,
                },
                AffineBranch {
                    left: 0.5,
                    right: 1.0,
                    slope: 2.0,
                },
            ],
            tail: None,
            expansion_floor: 2.0,
        }
    }

    /// The full-branch map on `I_n = [1/(n+1), 1/n)`, slopes `n(n+1)`.
    pub fn luroth() -> Self {
        Self {
            cells: Vec::new(),
            tail: Some(CountableTail::Luroth { first_index: 1 }),
            expansion_floor: 2.0,
        }
    }

    fn luroth_cell(n: u64) -> AffineBranch {
        let nf = n as f64;
        AffineBranch {
            left: 1.0 / (nf + 1.0),
            right: 1.0 / nf,
            slope: nf * (nf + 1.0),
        }
    }

    /// Copy with the slope of cell `label` replaced, materialising
    /// countable cells up to `label` if needed.
    pub fn with_slope(&self, label: u64, slope: f64) -> Self {
        let mut out = self.clone();
        if let Some(CountableTail::Luroth { first_index }) = out.tail {
            if label >= first_index {
                for n in first_index..=label {
                    out.cells.push(Self::luroth_cell(n));
                }
                out.tail = Some(CountableTail::Luroth {
                    first_index: label + 1,
                });
            }
        }
        if let Some(cell) = out.cells.get_mut((label - 1) as usize) {
            cell.slope = slope;
        }
        out
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        let bad = |m: String| Err(ProcessError::InvalidSpec(m));
        let covered_from = match self.tail {
            Some(CountableTail::Luroth { first_index }) => {
                if first_index as usize != self.cells.len() + 1 {
                    return bad(format!(
                        "countable tail must start at label {}, got {first_index}",
                        self.cells.len() + 1
                    ));
                }
                1.0 / first_index as f64
            }
            None => 0.0,
        };
        if self.cells.is_empty() && self.tail.is_none() {
            return bad("map has no cells".into());
        }
        let mut sorted: Vec<&AffineBranch> = self.cells.iter().collect();
        sorted.sort_by(|a, b| a.left.total_cmp(&b.left));
        let mut edge = covered_from;
        for c in sorted {
            if !(c.left < c.right) || !c.slope.is_finite() {
                return bad(format!("degenerate cell {c:?}"));
            }
            if (c.left - edge).abs() > PARTITION_TOL {
                return bad(format!("cells do not partition [0,1): gap or overlap at {edge}"));
            }
            edge = c.right;
        }
        if (edge - 1.0).abs() > PARTITION_TOL {
            return bad(format!("cells end at {edge}, not 1"));
        }
        Ok(())
    }

    /// Label of the cell containing `x`, if any.
    pub fn locate(&self, x: f64) -> Option<u64> {
        if let Some(i) = self.cells.iter().position(|c| c.left <= x && x < c.right) {
            return Some(i as u64 + 1);
        }
        match self.tail {
            Some(CountableTail::Luroth { first_index }) if x > 0.0 && x < 1.0 / first_index as f64 => {
                let mut n = (1.0 / x).floor() as u64;
                if x < 1.0 / (n as f64 + 1.0) {
                    n += 1;
                } else if n > 1 && x >= 1.0 / n as f64 {
                    n -= 1;
                }
                Some(n.max(first_index))
            }
            _ => None,
        }
    }

    pub fn branch(&self, label: u64) -> Option<AffineBranch> {
        if label == 0 {
            return None;
        }
        if let Some(c) = self.cells.get((label - 1) as usize) {
            return Some(*c);
        }
        match self.tail {
            Some(CountableTail::Luroth { first_index }) if label >= first_index => {
                Some(Self::luroth_cell(label))
            }
            _ => None,
        }
    }

    /// One step of the map. Points outside every cell (the accumulation point
    /// 0 of the countable partition) are returned unchanged.
    pub fn apply(&self, x: f64) -> f64 {
        match self.locate(x).and_then(|l| self.branch(l)) {
            Some(c) => {
                let y = c.slope * (x - c.left);
                if y >= 1.0 {
                    1.0 - f64::EPSILON / 2.0
                } else if y < 0.0 {
                    0.0
                } else {
                    y
                }
            }
            None => x,
        }
    }

    fn min_abs_slope(&self) -> f64 {
        let prefix = self.cells.iter().map(|c| c.slope.abs()).fold(f64::INFINITY, f64::min);
        match self.tail {
            Some(CountableTail::Luroth { first_index }) => {
                prefix.min(Self::luroth_cell(first_index).slope)
            }
            None => prefix,
        }
    }
}

/// Double-precision orbit `(x0, T x0, …, T^{n-1} x0)`.
///
/// Diagnostic only: rounding error is amplified by the slope at every step.
pub fn orbit_float(map: &PiecewiseMapSpec, x0: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    for _ in 0..n {
        out.push(x);
        x = map.apply(x);
    }
    out
}

/// Observable constant on each cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepObservable {
    /// `v_n = n^{1/α}` on the cell labelled `n`.
    PowerIndex { alpha: f64 },
    /// One value per finite cell.
    Explicit { values: Vec<f64> },
}

impl StepObservable {
    pub fn value(&self, label: u64) -> Option<f64> {
        match self {
            StepObservable::PowerIndex { alpha } => Some(luroth_value(label, 1.0 / alpha)),
            StepObservable::Explicit { values } => values.get((label as usize).checked_sub(1)?).copied(),
        }
    }

    fn validate_for(&self, map: &PiecewiseMapSpec) -> Result<(), ProcessError> {
        match self {
            StepObservable::PowerIndex { alpha } => {
                if *alpha > 0.0 && *alpha < 1.0 {
                    Ok(())
                } else {
                    Err(RegVarError::Alpha(*alpha).into())
                }
            }
            StepObservable::Explicit { values } => {
                if map.tail.is_some() || values.len() != map.cells.len() {
                    return Err(ProcessError::InvalidSpec(
                        "explicit observable needs one value per cell of a finite map".into(),
                    ));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(ProcessError::InvalidSpec(
                        "observable values must be finite and non-negative".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub witness: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingStatus {
    /// Every branch is full, which suffices for topological mixing.
    FullBranchSufficient,
    NotVerified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleConditionReport {
    pub adler: ConditionCheck,
    pub finite_image: ConditionCheck,
    pub expansion: ConditionCheck,
    pub variation: ConditionCheck,
    pub topological_mixing: MixingStatus,
}

impl ExampleConditionReport {
    pub fn checks(&self) -> [&ConditionCheck; 4] {
        [&self.adler, &self.finite_image, &self.expansion, &self.variation]
    }

    pub fn all_passed(&self) -> bool {
        self.checks().iter().all(|c| c.passed)
    }
}

/// Default truncation levels for the variation check.
pub fn default_level_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6]
}

const MAX_VARIATION_CELLS: u64 = 10_000_000;

/// Variations `(V(χ·1{χ≤ℓ}), V(1{χ>ℓ}))` of a step observable.
pub fn step_variations(
    map: &PiecewiseMapSpec,
    obs: &StepObservable,
    level: f64,
) -> Result<(f64, f64), String> {
    // (left edge, value) per cell; None marks the residual block of the
    // countable tail, where every value exceeds the level.
    let mut cells: Vec<(f64, Option<f64>)> = Vec::new();
    for (i, c) in map.cells.iter().enumerate() {
        let v = obs.value(i as u64 + 1).ok_or("observable undefined on a cell")?;
        cells.push((c.left, Some(v)));
    }
    if let Some(CountableTail::Luroth { first_index }) = map.tail {
        let StepObservable::PowerIndex { alpha } = obs else {
            return Err("countable partition needs an increasing index observable".into());
        };
        let inv = 1.0 / alpha;
        let mut n = first_index;
        while luroth_value(n, inv) <= level {
            n += 1;
            if n - first_index > MAX_VARIATION_CELLS {
                return Err(format!("more than {MAX_VARIATION_CELLS} cells below level {level}"));
            }
        }
        for k in first_index..n {
            cells.push((PiecewiseMapSpec::luroth_cell(k).left, Some(luroth_value(k, inv))));
        }
        cells.push((0.0, None));
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let truncated = |v: Option<f64>| match v {
        Some(x) if x <= level => x,
        _ => 0.0,
    };
    let indicator = |v: Option<f64>| match v {
        Some(x) if x <= level => 0.0f64,
        _ => 1.0,
    };
    let mut var_trunc = CompensatedSum::new();
    let mut var_ind = 0.0f64;
    for w in cells.windows(2) {
        var_trunc.add((truncated(w[1].1) - truncated(w[0].1)).abs());
        var_ind += (indicator(w[1].1) - indicator(w[0].1)).abs();
    }
    Ok((var_trunc.value(), var_ind))
}

pub fn validate_example_conditions(
    map: &PiecewiseMapSpec,
    obs: &StepObservable,
    k_bound: f64,
) -> Result<ExampleConditionReport, ProcessError> {
    validate_example_conditions_on(map, obs, k_bound, &default_level_grid())
}

/// Finite checklist for a step observable on a piecewise affine map:
/// affine branches, finitely many images, uniform expansion `|T'| ≥ m > 1`,
/// and `V(χ·1{χ≤ℓ}) ≤ k·ℓ`, `V(1{χ>ℓ}) ≤ k` on a grid of levels.
pub fn validate_example_conditions_on(
    map: &PiecewiseMapSpec,
    obs: &StepObservable,
    k_bound: f64,
    levels: &[f64],
) -> Result<ExampleConditionReport, ProcessError> {
    map.validate()?;
    let cell_count = map.cells.len() + usize::from(map.tail.is_some());
    if cell_count < 2 && map.tail.is_none() {
        return Err(ProcessError::InvalidSpec("map needs at least two cells".into()));
    }
    let adler = ConditionCheck {
        name: "adler",
        passed: true,
        witness: "all branches affine, T'' = 0".into(),
    };

    let mut images: Vec<(f64, f64)> = Vec::new();
    let mut all_full = true;
    let tail_image = map.tail.map(|CountableTail::Luroth { first_index }| {
        PiecewiseMapSpec::luroth_cell(first_index).image()
    });
    for img in map.cells.iter().map(AffineBranch::image).chain(tail_image) {
        if (img.0).abs() > 1e-9 || (img.1 - 1.0).abs() > 1e-9 {
            all_full = false;
        }
        if !images
            .iter()
            .any(|i| (i.0 - img.0).abs() < 1e-9 && (i.1 - img.1).abs() < 1e-9)
        {
            images.push(img);
        }
    }
    let finite_image = ConditionCheck {
        name: "finite_image",
        passed: true,
        witness: format!("{} distinct branch image(s)", images.len()),
    };

    let m = map.expansion_floor;
    let min_slope = map.min_abs_slope();
    let expansion = ConditionCheck {
        name: "uniform_expansion",
        passed: m > 1.0 && min_slope >= m,
        witness: format!("min |T'| = {min_slope}, m = {m}"),
    };

    let mut worst = (0.0f64, 0.0f64, f64::NAN);
    let mut passed = true;
    let mut failure = None;
    for &level in levels {
        match step_variations(map, obs, level) {
            Ok((vt, vi)) => {
                let ok = vt <= k_bound * level + 1e-9 * level.max(1.0) && vi <= k_bound;
                if !ok {
                    passed = false;
                }
                let ratio = if level > 0.0 { vt / level } else { 0.0 };
                if ratio >= worst.0 || vi > worst.1 || !ok {
                    worst = (worst.0.max(ratio), worst.1.max(vi), level);
                }
            }
            Err(e) => {
                passed = false;
                failure = Some(format!("not verified at level {level}: {e}"));
            }
        }
    }
    let variation = ConditionCheck {
        name: "variation",
        passed,
        witness: failure.unwrap_or_else(|| {
            format!(
                "max V(trunc)/level = {}, max V(indicator) = {}, k = {k_bound}",
                worst.0, worst.1
            )
        }),
    };
    Ok(ExampleConditionReport {
        adler,
        finite_image,
        expansion,
        variation,
        topological_mixing: if all_full {
            MixingStatus::FullBranchSufficient
        } else {
            MixingStatus::NotVerified
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheckPoint {
    pub x: f64,
    pub empirical: f64,
    pub exact: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheckReport {
    pub n: usize,
    pub points: Vec<TailCheckPoint>,
    pub max_abs_deviation: f64,
}

impl TailCheckReport {
    /// Largest `|empirical − exact| / SE` over points with positive SE.
    pub fn max_z(&self) -> f64 {
        self.points
            .iter()
            .filter(|p| p.standard_error > 0.0)
            .map(|p| (p.empirical - p.exact).abs() / p.standard_error)
            .fold(0.0, f64::max)
    }
}

/// Empirical exceedance frequencies against an exact tail.
pub fn empirical_tail_check(
    values: &[f64],
    tail: &dyn TailLaw,
    grid: &[f64],
) -> Result<TailCheckReport, ProcessError> {
    if values.len() < 1000 {
        return Err(ProcessError::PathTooShort {
            needed: 1000,
            have: values.len(),
        });
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut points = Vec::with_capacity(grid.len());
    let mut max_dev = 0.0f64;
    for &x in grid {
        let above = n - sorted.partition_point(|v| *v <= x);
        let empirical = above as f64 / n as f64;
        let exact = tail.tail(x.max(tail.support_left()))?;
        let exact = if x < tail.support_left() { 1.0 } else { exact };
        let standard_error = (exact * (1.0 - exact) / n as f64).sqrt();
        max_dev = max_dev.max((empirical - exact).abs());
        points.push(TailCheckPoint {
            x,
            empirical,
            exact,
            standard_error,
        });
    }
    Ok(TailCheckReport {
        n,
        points,
        max_abs_deviation: max_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luroth_values_from_digits() {
        let inv = 1.0 / 0.5;
        let vals: Vec<f64> = [1u64, 2, 1].iter().map(|&d| luroth_value(d, inv)).collect();
        assert_eq!(vals, vec![1.0, 4.0, 1.0]);
    }

    #[test]
    fn luroth_digit_boundaries() {
        assert_eq!(luroth_digit(1.0), 1);
        assert_eq!(luroth_digit(0.5), 2);
        assert_eq!(luroth_digit(0.500001), 1);
        assert_eq!(luroth_digit(0.25), 4);
        assert_eq!(luroth_digit(1.0 / 3.0), 3);
    }

    #[test]
    fn luroth_digit_law_telescopes() {
        let total: f64 = (1..100_000u64).map(|n| 1.0 / (n as f64 * (n + 1) as f64)).sum();
        assert!((total - (1.0 - 1.0 / 100_000.0)).abs() < 1e-12);
    }

    #[test]
    fn doubling_exact_dyadic() {
        let mut s = DoublingStream::new(FixedBits::new(&[true]), 2.0, 64, 512);
        assert_eq!(s.next_log2_point().unwrap(), -1.0);
        let mut s = DoublingStream::new(FixedBits::new(&[true]), 2.0, 64, 512);
        assert_eq!(s.next_value().unwrap(), 4.0);
    }

    #[test]
    fn doubling_overflow_is_surfaced() {
        // bits 1 then zeros: the second point has no one-bit within the window
        let mut s = DoublingStream::new(FixedBits::new(&[true]), 2.0, 64, 128);
        s.next_value().unwrap();
        assert!(matches!(
            s.next_value(),
            Err(ProcessError::PrecisionOverflow { index: 1, .. })
        ));
    }

    #[test]
    fn doubling_shift_consistency() {
        let mut rng = crate::rng::replica_rng(11, 0);
        let bits: Vec<bool> = (0..2000).map(|_| rng.next_u32() & 1 == 1).collect();
        let mut full = DoublingStream::new(FixedBits::new(&bits), 2.0, 64, 512);
        let mut shifted = DoublingStream::new(FixedBits::new(&bits[1..]), 2.0, 64, 512);
        full.next_value().unwrap();
        for _ in 0..1500 {
            assert_eq!(full.next_value().unwrap(), shifted.next_value().unwrap());
        }
    }

    #[test]
    fn doubling_window_matches_direct_evaluation() {
        // 0.0011 0101... = 2^-3 + 2^-4 + 2^-6 + 2^-8
        let bits = [false, false, true, true, false, true, false, true];
        let mut s = DoublingStream::new(FixedBits::new(&bits), 1.5, 64, 512);
        let x: f64 = 0.125 + 0.0625 + 0.015625 + 0.00390625;
        let v = s.next_value().unwrap();
        assert!((v / x.powf(-1.5) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn iid_inverse_cdf() {
        let t = RegVaryingTail::pareto(0.5).unwrap();
        assert!((iid_value(&t, 0.99).unwrap() / 1e4 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orbit_examples() {
        let d = PiecewiseMapSpec::doubling();
        let o = orbit_float(&d, 0.2, 5);
        for (a, b) in o.iter().zip([0.2, 0.4, 0.8, 0.6, 0.2]) {
            assert!((a - b).abs() < 1e-12, "{o:?}");
        }
        assert_eq!(orbit_float(&d, 0.0, 3), vec![0.0, 0.0, 0.0]);
        let l = PiecewiseMapSpec::luroth();
        let o = orbit_float(&l, 0.6, 2);
        assert!((o[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn dyadic_orbits_are_exact() {
        let d = PiecewiseMapSpec::doubling();
        let mut rng = crate::rng::replica_rng(3, 0);
        for _ in 0..200 {
            let num = rng.next_u64() >> 24; // < 2^40
            let x0 = num as f64 / (1u64 << 40) as f64;
            let orbit = orbit_float(&d, x0, 50);
            let mut exact = num;
            for x in orbit {
                assert_eq!(x, exact as f64 / (1u64 << 40) as f64);
                exact = (exact << 1) & ((1u64 << 40) - 1);
            }
        }
    }

    #[test]
    fn luroth_locate_and_branches() {
        let l = PiecewiseMapSpec::luroth();
        assert_eq!(l.locate(0.6), Some(1));
        assert_eq!(l.locate(0.5), Some(1));
        assert_eq!(l.locate(0.4), Some(2));
        assert_eq!(l.locate(1.0 / 3.0), Some(2));
        assert_eq!(l.locate(0.0), None);
        assert_eq!(l.branch(3).unwrap().slope, 12.0);
    }

    #[test]
    fn validator_canonical_map_passes() {
        let r = validate_example_conditions(
            &PiecewiseMapSpec::luroth(),
            &StepObservable::PowerIndex { alpha: 0.5 },
            4.0,
        )
        .unwrap();
        assert!(r.all_passed(), "{r:?}");
        assert_eq!(r.topological_mixing, MixingStatus::FullBranchSufficient);
    }

    #[test]
    fn variation_at_level_four() {
        let (vt, vi) = step_variations(
            &PiecewiseMapSpec::luroth(),
            &StepObservable::PowerIndex { alpha: 0.5 },
            4.0,
        )
        .unwrap();
        // cells d ∈ {1, 2} survive: 0 → 4 → 1
        assert_eq!(vt, 7.0);
        assert!(vt <= 2.0 * 4.0);
        assert_eq!(vi, 1.0);
        let (vt, vi) = step_variations(
            &PiecewiseMapSpec::luroth(),
            &StepObservable::PowerIndex { alpha: 0.5 },
            0.5,
        )
        .unwrap();
        assert_eq!((vt, vi), (0.0, 0.0));
    }

    #[test]
    fn validator_mutant_fails_expansion_only() {
        let mutant = PiecewiseMapSpec::luroth().with_slope(1, 0.5);
        let r = validate_example_conditions(
            &mutant,
            &StepObservable::PowerIndex { alpha: 0.5 },
            4.0,
        )
        .unwrap();
        assert!(!r.expansion.passed);
        assert!(r.adler.passed && r.finite_image.passed && r.variation.passed);
        assert_eq!(r.topological_mixing, MixingStatus::NotVerified);
    }

    #[test]
    fn partition_validation() {
        let mut m = PiecewiseMapSpec::doubling();
        m.cells[1].left = 0.6;
        assert!(m.validate().is_err());
        assert!(PiecewiseMapSpec::luroth().with_slope(3, 5.0).validate().is_ok());
    }

    #[test]
    fn luroth_tail_exact_values() {
        let t = LurothTail { alpha: 0.5 };
        assert_eq!(t.tail(2.0).unwrap(), 0.5);
        assert_eq!(t.tail(4.0).unwrap(), 1.0 / 3.0);
        assert_eq!(t.tail(3.99).unwrap(), 0.5);
        assert_eq!(t.tail_quantile(0.5).unwrap(), 1.0);
        assert_eq!(t.tail_quantile(0.4).unwrap(), 4.0);
        assert_eq!(t.tail_quantile(1.0 / 3.0).unwrap(), 4.0);
        // E[d^2; d ≤ 2] = 1/2 + 4/6
        assert!((t.truncated_mean(4.0).unwrap() - (0.5 + 4.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_path_has_no_exceedances() {
        let ones = vec![1.0; 1000];
        let t = RegVaryingTail::pareto(0.5).unwrap();
        let r = empirical_tail_check(&ones, &t, &[2.0]).unwrap();
        assert_eq!(r.points[0].empirical, 0.0);
        assert!(empirical_tail_check(&ones[..10], &t, &[2.0]).is_err());
    }

    #[test]
    fn path_dump_round_trip() {
        let spec = ProcessSpec::luroth(0.5);
        let p = sample_path(&spec, 50, 9).unwrap();
        let mut buf = Vec::new();
        write_path(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# trimlab-path v1 spec={\"kind\":\"luroth_step\""));
        let back = read_path(&buf[..]).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn float_orbit_process_runs() {
        let spec = ProcessSpec::FloatOrbit {
            map: PiecewiseMapSpec::luroth(),
            observable: StepObservable::PowerIndex { alpha: 0.5 },
            burn_in: 10,
        };
        let p = sample_path(&spec, 100, 1);
        // float orbits may degenerate, but must never yield NaN
        if let Ok(p) = p {
            assert!(p.values.iter().all(|v| v.is_finite() && *v >= 1.0));
        }
    }
}
