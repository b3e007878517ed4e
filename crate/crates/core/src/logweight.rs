//! Nonnegative weights stored as natural logarithms.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::iter::{Product, Sum};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign};

/// A nonnegative scalar represented by its natural logarithm.
///
/// Zero is `ln = -inf`. Multiplication adds logs, addition is log-sum-exp.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogWeight(f64);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);
    pub const ONE: LogWeight = LogWeight(0.0);

    /// Wraps a log value. NaN is rejected; `-inf` is zero.
    pub fn from_ln(ln: f64) -> Self {
        assert!(!ln.is_nan(), "LogWeight from NaN");
        assert!(ln != f64::INFINITY, "LogWeight of +inf");
        LogWeight(ln)
    }

    pub fn from_linear(x: f64) -> Self {
        assert!(x >= 0.0, "LogWeight of negative value {x}");
        LogWeight(x.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    /// Linear value; overflows to `inf` for large weights.
    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn powf(self, e: f64) -> Self {
        if self.is_zero() {
            if e > 0.0 {
                return Self::ZERO;
            }
            return Self::ONE;
        }
        LogWeight(self.0 * e)
    }

    /// Relative difference `|a - b| / max(a, b)` computed in log space.
    pub fn rel_diff(self, other: Self) -> f64 {
        if self.is_zero() && other.is_zero() {
            return 0.0;
        }
        let d = (self.0 - other.0).abs();
        -(-d).exp_m1()
    }
}

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl Add for LogWeight {
    type Output = LogWeight;
    fn add(self, rhs: Self) -> Self {
        LogWeight(log_add(self.0, rhs.0))
    }
}

impl AddAssign for LogWeight {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Mul for LogWeight {
    type Output = LogWeight;
    fn mul(self, rhs: Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::ZERO;
        }
        LogWeight(self.0 + rhs.0)
    }
}

impl MulAssign for LogWeight {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl Div for LogWeight {
    type Output = LogWeight;
    fn div(self, rhs: Self) -> Self {
        assert!(!rhs.is_zero(), "LogWeight division by zero");
        if self.is_zero() {
            return Self::ZERO;
        }
        LogWeight(self.0 - rhs.0)
    }
}

impl Sum for LogWeight {
    /// Max-shifted log-sum-exp over the whole iterator.
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let logs: Vec<f64> = iter.map(|w| w.0).collect();
        LogWeight(log_sum_exp(&logs))
    }
}

impl Product for LogWeight {
    fn product<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ONE, |a, b| a * b)
    }
}

impl PartialOrd for LogWeight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

impl fmt::Debug for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogWeight(ln={})", self.0)
    }
}

impl fmt::Display for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp({})", self.0)
    }
}

pub(crate) fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = logs.iter().map(|&l| (l - max).exp()).sum();
    max + s.ln()
}

/// Renewal-type recursion evaluated in log space.
///
/// Computes `ln W(j)` for `j = 0..=n` with `W(0) = 1` and
/// `W(j) = exp(reward(j)) * sum_{i<j} W(i) * kernel(i, j)`.
///
/// Earlier values are kept as `exp(ln W(i) - reference)` with a reference
/// that is raised whenever a new value exceeds it by more than `REBASE`.
/// When every surviving term of a row underflows, that row is recomputed
/// with an exact max-shifted sum.
pub(crate) fn log_renewal_dp<R, K>(n: usize, reward: R, kernel: K) -> Vec<f64>
where
    R: Fn(usize) -> f64,
    K: Fn(usize, usize) -> f64,
{
    const REBASE: f64 = 256.0;
    const UNDERFLOW_GUARD: f64 = 1e-250;

    let mut logs = Vec::with_capacity(n + 1);
    let mut scaled = Vec::with_capacity(n + 1);
    let mut reference = 0.0_f64;
    logs.push(0.0);
    scaled.push(1.0);

    for j in 1..=n {
        let mut acc = 0.0;
        for (i, &s) in scaled.iter().enumerate() {
            acc += s * kernel(i, j);
        }
        let inner = if acc > UNDERFLOW_GUARD {
            reference + acc.ln()
        } else {
            let terms: Vec<f64> = (0..j)
                .map(|i| {
                    let k = kernel(i, j);
                    if k > 0.0 {
                        logs[i] + k.ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            log_sum_exp(&terms)
        };
        let r = reward(j);
        let value = if inner == f64::NEG_INFINITY || r == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            inner + r
        };
        logs.push(value);
        if value > reference + REBASE {
            let shift = (reference - value).exp();
            for s in scaled.iter_mut() {
                *s *= shift;
            }
            reference = value;
        }
        scaled.push((value - reference).exp());
    }
    logs
}
