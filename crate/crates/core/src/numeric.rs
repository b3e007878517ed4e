//! Small numerical helpers shared by the kernels.

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(iter);
    acc.value()
}

/// `x^{-3/2}` for positive `x`.
#[inline]
pub fn inv_pow_three_halves(x: f64) -> f64 {
    1.0 / (x * x.sqrt())
}

/// `floor(1.5 ln l)`, the per-gap entropy cost used when clustering charges.
///
/// Every module that buckets gaps by this quantity goes through this one
/// function so the bucket boundaries agree bit-for-bit.
#[inline]
pub fn log_bucket(l: u64) -> i64 {
    debug_assert!(l >= 1);
    (1.5 * (l as f64).ln()).floor() as i64
}

/// Inclusive range of gaps `l` in `[1, l_max]` with `log_bucket(l) == m`,
/// or `None` when the bucket is empty.
pub fn bucket_range(m: i64, l_max: u64) -> Option<(u64, u64)> {
    if m < 0 || l_max == 0 {
        return None;
    }
    let lo = first_gap_with_bucket_at_least(m)?;
    let hi = match first_gap_with_bucket_at_least(m + 1) {
        Some(next) => next - 1,
        None => u64::MAX,
    }
    .min(l_max);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

fn first_gap_with_bucket_at_least(m: i64) -> Option<u64> {
    if m <= 0 {
        return Some(1);
    }
    let guess = (2.0 * m as f64 / 3.0).exp().ceil();
    if !guess.is_finite() || guess >= 1.8e19 {
        return None;
    }
    let mut l = (guess as u64).max(1);
    while l > 1 && log_bucket(l - 1) >= m {
        l -= 1;
    }
    while log_bucket(l) < m {
        l += 1;
    }
    Some(l)
}

/// Sum of `r^{l-1}` for `l` in `[lo, hi]` where `r = 1 - c`, computed from
/// `ln r` without cancellation.
pub fn geometric_range_sum(c: f64, lo: u64, hi: u64) -> f64 {
    debug_assert!(lo >= 1 && hi >= lo);
    if c >= 1.0 {
        return if lo == 1 { 1.0 } else { 0.0 };
    }
    let ln_r = (-c).ln_1p();
    let count = (hi - lo + 1) as f64;
    // r^{lo-1} * (1 - r^count) / (1 - r)
    let head = ((lo - 1) as f64 * ln_r).exp();
    let body = -(count * ln_r).exp_m1();
    head * body / c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1.0e16, 1.0];
        xs.extend(std::iter::repeat_n(1.0, 99));
        xs.push(-1.0e16);
        assert_eq!(compensated_sum(xs), 100.0);
    }

    #[test]
    fn buckets_cover_every_gap_exactly_once() {
        let l_max = 50_000;
        let mut next = 1;
        for m in 0..=(1.5 * (l_max as f64).ln()) as i64 {
            if let Some((lo, hi)) = bucket_range(m, l_max) {
                assert_eq!(lo, next, "bucket {m}");
                for l in [lo, hi] {
                    assert_eq!(log_bucket(l), m);
                }
                next = hi + 1;
            }
        }
        assert_eq!(next, l_max + 1);
    }

    #[test]
    fn geometric_range_matches_direct_sum() {
        for &c in &[1e-9_f64, 0.01, 0.3, 0.9] {
            for &(lo, hi) in &[(1u64, 1u64), (1, 10), (5, 70), (100, 400)] {
                let direct: f64 = (lo..=hi).map(|l| (1.0 - c).powi(l as i32 - 1)).sum();
                let closed = geometric_range_sum(c, lo, hi);
                assert!(
                    (direct - closed).abs() <= 1e-12 * direct.max(1.0),
                    "{c} {lo} {hi}"
                );
            }
        }
    }
}
