//! Small numeric helpers shared across modules.

use std::cmp::Ordering;

/// Neumaier's compensated sum.
///
/// Heavy-tailed summands span many orders of magnitude, so a plain running
/// `f64` sum loses the small terms next to a single huge one.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Totally ordered wrapper for non-NaN floats, usable in heaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ordered(pub f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Sample mean and standard error of the mean. The standard error is `None`
/// for fewer than two observations.
pub fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().copied().collect::<CompensatedSum>().value() / m as f64;
    if m < 2 {
        return (mean, None);
    }
    let ss = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .collect::<CompensatedSum>()
        .value();
    let var = ss / (m - 1) as f64;
    (mean, Some((var / m as f64).sqrt()))
}

/// Formats a float with 17 significant digits in scientific notation.
pub fn fmt_sci(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut acc = CompensatedSum::new();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 1000.0);
    }

    #[test]
    fn se_needs_two_points() {
        assert_eq!(mean_and_se(&[3.0]), (3.0, None));
        let (m, se) = mean_and_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sci_format_round_trips() {
        let x = 0.1f64 + 0.2;
        assert_eq!(fmt_sci(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt_sci(f64::INFINITY), "inf");
    }
}
