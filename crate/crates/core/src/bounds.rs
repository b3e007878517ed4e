//! Absolute constants of the renormalization argument and numerical checks
//! of the analytic estimates it rests on.

use crate::error::{Error, Result};
use crate::numeric::{bucket_range, compensated_sum, inv_pow_three_halves, CompensatedSum};
use crate::renorm::level_length;
use serde::Serialize;

/// Relative slack allowed when comparing a computed value with its bound.
const ROUNDING_SLACK: f64 = 1e-12;

/// Certified constants. Each is rounded in the direction that keeps the
/// downstream admissibility predicates valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProofConstants {
    /// `A = 1 / ζ(3/2)`, midpoint of the enclosure.
    pub a: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    /// Largest certified `γ_0` with `Σ k^{5/2} γ^k <= γ + 8 γ^2` on `[0, γ_0]`.
    pub gamma0: f64,
    /// `K_0 = -ln(A γ_0)`, evaluated with the lower end of `A`.
    pub k0: f64,
    /// `B = 8 / A`, evaluated with the lower end of `A`.
    pub big_b: f64,
}

/// Encloses `ζ(3/2)` between the partial sum plus `2/sqrt(N+1)` and the
/// partial sum plus `2/sqrt(N)`, then finds `γ_0` by bisection.
pub fn compute_constants(tail_terms: usize) -> ProofConstants {
    let n = tail_terms.max(10_000);
    let partial = compensated_sum((1..=n).map(|k| inv_pow_three_halves(k as f64)));
    let zeta_lo = partial + 2.0 / ((n + 1) as f64).sqrt();
    let zeta_hi = partial + 2.0 / (n as f64).sqrt();
    let a_lo = 1.0 / zeta_hi;
    let a_hi = 1.0 / zeta_lo;
    let a = 0.5 * (a_lo + a_hi);

    let (mut lo, mut hi) = (0.0, 0.5);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if gamma_predicate(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma0 = lo * (1.0 - 1e-9);
    let k0 = -(a_lo * gamma0).ln() * (1.0 + 1e-12);
    ProofConstants {
        a,
        a_lo,
        a_hi,
        gamma0,
        k0,
        big_b: 8.0 / a_lo,
    }
}

/// Upper bound on `Σ_{k>=2} k^{5/2} γ^{k-2}`: explicit terms up to
/// `K_EXPLICIT`, then a geometric tail with ratio `(1 + 1/k)^{5/2} γ`.
pub fn g_excess_upper(gamma: f64) -> f64 {
    const K_EXPLICIT: usize = 400;
    let term = |k: usize| (k as f64).powf(2.5) * gamma.powi(k as i32 - 2);
    let head = compensated_sum((2..=K_EXPLICIT).map(term));
    let next = K_EXPLICIT + 1;
    let ratio = (1.0 + 1.0 / next as f64).powf(2.5) * gamma;
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    head + term(next) / (1.0 - ratio)
}

/// `g(γ) <= γ + 8 γ^2` with the tail of `g` enclosed, for `γ > 0`.
///
/// Dividing by `γ^2` leaves `Σ_{k>=2} k^{5/2} γ^{k-2} <= 8`, whose left side
/// is increasing in `γ`, so the predicate holds on an interval `[0, γ*]`.
pub fn gamma_predicate(gamma: f64) -> bool {
    gamma <= 0.0 || g_excess_upper(gamma) <= 8.0
}

/// `g(γ) = Σ_{k>=1} k^{5/2} γ^k` (upper enclosure).
pub fn g_series(gamma: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    gamma + gamma * gamma * g_excess_upper(gamma)
}

/// A computed quantity against its analytic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(value: f64, bound: f64) -> Self {
        Self {
            value,
            bound,
            holds: value <= bound * (1.0 + ROUNDING_SLACK),
        }
    }

    pub fn ratio(&self) -> f64 {
        self.value / self.bound
    }
}

fn require_removal(k_exp: f64, c: f64, constants: &ProofConstants) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "constant must be positive, got {c}"
        )));
    }
    if k_exp < constants.k0 + c.ln() {
        return Err(Error::Inadmissible(format!(
            "K = {k_exp} below K_0 + ln C = {}",
            constants.k0 + c.ln()
        )));
    }
    Ok(())
}

/// Renewal sums `Θ(m) = Σ_{j<m} Θ(j) γ (m - j)^{-3/2}`, `Θ(0) = 1`, with
/// `γ = C e^{-K}`, each compared to `(1 + B C e^{-K}) C e^{-K} / m^{3/2}`.
/// Entry `m - 1` of the result is `Θ(m)`.
pub fn theta_plus_sweep(
    n: usize,
    c: f64,
    k_exp: f64,
    constants: &ProofConstants,
) -> Result<Vec<BoundCheck>> {
    require_removal(k_exp, c, constants)?;
    let gamma = c * (-k_exp).exp();
    let kernel: Vec<f64> = (0..=n)
        .map(|d| {
            if d == 0 {
                0.0
            } else {
                inv_pow_three_halves(d as f64)
            }
        })
        .collect();
    let mut theta = vec![1.0];
    let mut checks = Vec::with_capacity(n);
    let prefactor = (1.0 + constants.big_b * gamma) * gamma;
    for m in 1..=n {
        let mut acc = CompensatedSum::new();
        for j in 0..m {
            acc.add(theta[j] * kernel[m - j]);
        }
        let value = gamma * acc.value();
        theta.push(value);
        checks.push(BoundCheck::new(value, prefactor * kernel[m]));
    }
    Ok(checks)
}

/// `Θ_N` and its bound.
pub fn theta_plus(n: usize, c: f64, k_exp: f64, constants: &ProofConstants) -> Result<BoundCheck> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    Ok(*theta_plus_sweep(n, c, k_exp, constants)?.last().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvPowerReport {
    /// Largest `q^{*k}(n) n^{3/2} / (A k^{5/2})` seen.
    pub worst_ratio: f64,
    pub worst_k: usize,
    pub worst_n: usize,
    /// Mass of `q` beyond `n_max`, which the truncated powers never touch.
    pub tail_mass: f64,
}

/// `q^{*k}(n) n^{3/2} / (A k^{5/2})` for `k = 1..=k_max` (outer index
/// `k - 1`) and `n = 0..=n_max`, where `q(n) = A n^{-3/2}`.
pub fn conv_power_ratios(k_max: usize, n_max: usize, constants: &ProofConstants) -> Vec<Vec<f64>> {
    let a = constants.a;
    let q: Vec<f64> = (0..=n_max)
        .map(|n| {
            if n == 0 {
                0.0
            } else {
                a * inv_pow_three_halves(n as f64)
            }
        })
        .collect();
    let mut power = q.clone();
    let mut ratios = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        if k > 1 {
            let mut next = vec![0.0; n_max + 1];
            for n in k..=n_max {
                let mut acc = CompensatedSum::new();
                for m in 1..=n - (k - 1) {
                    acc.add(q[m] * power[n - m]);
                }
                next[n] = acc.value();
            }
            power = next;
        }
        let scale = a * (k as f64).powf(2.5);
        ratios.push(
            (0..=n_max)
                .map(|n| {
                    if n == 0 {
                        0.0
                    } else {
                        power[n] / (scale * inv_pow_three_halves(n as f64))
                    }
                })
                .collect(),
        );
    }
    ratios
}

/// Worst case of [`conv_power_ratios`].
pub fn conv_power_bound(k_max: usize, n_max: usize, constants: &ProofConstants) -> ConvPowerReport {
    let mut report = ConvPowerReport {
        worst_ratio: 0.0,
        worst_k: 1,
        worst_n: 1,
        tail_mass: constants.a * 2.0 / (n_max as f64).sqrt(),
    };
    for (i, row) in conv_power_ratios(k_max, n_max, constants)
        .iter()
        .enumerate()
    {
        for (n, &ratio) in row.iter().enumerate() {
            if ratio > report.worst_ratio {
                report = ConvPowerReport {
                    worst_ratio: ratio,
                    worst_k: i + 1,
                    worst_n: n,
                    ..report
                };
            }
        }
    }
    report
}

/// Weighted sum over subsets of `points` containing both endpoints:
/// `Σ_A C^{|A|-1} e^{(|A|-2) b} Π (s_i - s_{i-1})^{-3/2}`, compared with
/// `(1 + B C e^{-K}) C / (t_N - t_0)^{3/2}`.
pub fn xi(
    b: f64,
    c: f64,
    k_exp: f64,
    points: &[u64],
    constants: &ProofConstants,
) -> Result<BoundCheck> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    require_removal(k_exp, c, constants)?;
    let min_gap = ((2.0 / 3.0) * (b + k_exp)).exp();
    for w in points.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidArgument(
                "points must be strictly increasing".into(),
            ));
        }
        if ((w[1] - w[0]) as f64) <= min_gap {
            return Err(Error::Inadmissible(format!(
                "gap {} not above e^(2/3 (b + K)) = {min_gap}",
                w[1] - w[0]
            )));
        }
    }
    let value = xi_value(b, c, points);
    let span = (points[points.len() - 1] - points[0]) as f64;
    let bound = (1.0 + constants.big_b * c * (-k_exp).exp()) * c * inv_pow_three_halves(span);
    Ok(BoundCheck::new(value, bound))
}

/// Renewal recursion over the points with step weight `C e^b / gap^{3/2}`;
/// the last point carries no reward, hence the final `e^{-b}`.
fn xi_value(b: f64, c: f64, points: &[u64]) -> f64 {
    let step = c * b.exp();
    let mut x = vec![1.0];
    for j in 1..points.len() {
        let mut acc = CompensatedSum::new();
        for i in 0..j {
            acc.add(x[i] * inv_pow_three_halves((points[j] - points[i]) as f64));
        }
        x.push(step * acc.value());
    }
    x[points.len() - 1] * (-b).exp()
}

/// `e^{√b - √(b + u)}` for `u = 0..=u_max`, the summand of the composition
/// sums rescaled by `e^{√b}` per part.
fn scaled_part_weights(b: u64, u_max: usize) -> Vec<f64> {
    let sb = (b as f64).sqrt();
    (0..=u_max)
        .map(|u| (sb - ((b as usize + u) as f64).sqrt()).exp())
        .collect()
}

/// `a_m(u) = e^{m √b} A_{m,b}(m b + u)` for `u = 0..=u_max`.
fn scaled_composition_sums(m: usize, b: u64, u_max: usize) -> Vec<f64> {
    let part = scaled_part_weights(b, u_max);
    let mut acc = part.clone();
    for _ in 1..m {
        let mut next = vec![0.0; u_max + 1];
        for (u, slot) in next.iter_mut().enumerate() {
            let mut sum = CompensatedSum::new();
            for v in 0..=u {
                sum.add(acc[v] * part[u - v]);
            }
            *slot = sum.value();
        }
        acc = next;
    }
    acc
}

/// `ln A_{m,b}(z)` for `z` in `m b ..= m b + u_max`, indexed by `z - m b`.
pub fn ln_composition_sums(m: usize, b: u64, u_max: usize) -> Vec<f64> {
    let shift = m as f64 * (b as f64).sqrt();
    scaled_composition_sums(m, b, u_max)
        .into_iter()
        .map(|a| a.ln() - shift)
        .collect()
}

fn require_induction_range(m: usize, b: u64) -> Result<()> {
    if m < 2 {
        return Err(Error::Inadmissible(format!(
            "need at least two parts, got {m}"
        )));
    }
    if b < 100 {
        return Err(Error::Inadmissible(format!(
            "part size floor {b} below 100"
        )));
    }
    Ok(())
}

/// `A_{m,b}(z) = Σ_{x_i >= b, Σ x_i = z} e^{-Σ √x_i}` against
/// `e^{-√z - (m-1) √b / 4}`. Zero when `z < m b`.
pub fn a_mb(m: usize, b: u64, z: u64) -> Result<BoundCheck> {
    require_induction_range(m, b)?;
    let bound = (-(z as f64).sqrt() - (m - 1) as f64 * (b as f64).sqrt() / 4.0).exp();
    let floor = m as u64 * b;
    if z < floor {
        return Ok(BoundCheck::new(0.0, bound));
    }
    let ln = ln_composition_sums(m, b, (z - floor) as usize);
    Ok(BoundCheck::new(ln[(z - floor) as usize].exp(), bound))
}

/// `A_{m,b}(z)` checks for every `z` in `z_lo..=z_hi` from one convolution.
pub fn a_mb_sweep(m: usize, b: u64, z_lo: u64, z_hi: u64) -> Result<Vec<(u64, BoundCheck)>> {
    require_induction_range(m, b)?;
    let floor = m as u64 * b;
    let ln = if z_hi >= floor {
        ln_composition_sums(m, b, (z_hi - floor) as usize)
    } else {
        Vec::new()
    };
    Ok((z_lo..=z_hi)
        .map(|z| {
            let bound = (-(z as f64).sqrt() - (m - 1) as f64 * (b as f64).sqrt() / 4.0).exp();
            let value = if z < floor {
                0.0
            } else {
                ln[(z - floor) as usize].exp()
            };
            (z, BoundCheck::new(value, bound))
        })
        .collect())
}

/// Bound check carried out on natural logarithms, for quantities far below
/// the smallest double.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogBoundCheck {
    pub ln_value: f64,
    pub ln_bound: f64,
    pub holds: bool,
    /// `-√b/8 + (4/3) K + √(2K/n) + 1 + ln((2/3)(b + K))`; negative values
    /// put `b` in the range where the analytic argument closes.
    pub sufficient_exponent: f64,
}

/// Number of gaps `ℓ <= L` with `floor(1.5 ln ℓ) = m`, times `e^{-(2/3) m}`,
/// for `m = 0..`. `ln_l` is `ln L`; `l_exact` is `L` when representable.
fn bucket_weights(ln_l: f64, l_exact: Option<u64>) -> Vec<f64> {
    let m_max = (1.5 * ln_l).floor() as i64;
    (0..=m_max)
        .map(|m| {
            let decay = (-(2.0 / 3.0) * m as f64).exp();
            match l_exact {
                Some(l) => bucket_range(m, l).map_or(0.0, |(lo, hi)| (hi - lo + 1) as f64 * decay),
                None => {
                    // continuum count; relative error below e^{-2m/3}
                    let lo = (2.0 / 3.0) * m as f64;
                    let hi = ((2.0 / 3.0) * (m + 1) as f64).min(ln_l);
                    match bucket_range(m, u64::MAX) {
                        Some((lo_l, hi_l)) if m < 40 => (hi_l - lo_l + 1) as f64 * decay,
                        _ => (hi - lo).exp_m1() * (lo - (2.0 / 3.0) * m as f64).exp(),
                    }
                }
            }
        })
        .collect()
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `B_{n,b}(x) = Σ_{ℓ_1..ℓ_n <= L} e^{-(2/3) y} A_{n+1,b}(y)` with
/// `y = x + Σ_i (floor(1.5 ln ℓ_i) - 2K)`, evaluated by grouping the `ℓ_i`
/// by `floor(1.5 ln ℓ_i)`. `L` defaults to `floor(e^{(2/3)(b + K)})`.
pub fn b_nb(n: usize, b: u64, x: u64, k_b: i64, l_override: Option<u64>) -> Result<LogBoundCheck> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one gap".into()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("level must be positive".into()));
    }
    let (ln_l, l_exact) = match l_override {
        Some(l) if l >= 1 => ((l as f64).ln(), Some(l)),
        Some(_) => {
            return Err(Error::InvalidArgument(
                "gap range must be at least 1".into(),
            ))
        }
        None => {
            let ln_l = (2.0 / 3.0) * (b as f64 + k_b as f64);
            (ln_l, level_length(b, k_b).ok())
        }
    };
    let ln_l = l_exact.map_or(ln_l, |l| (l as f64).ln());
    let single = bucket_weights(ln_l, l_exact);
    let mut weights = single.clone();
    for _ in 1..n {
        weights = convolve(&weights, &single);
    }
    // y = x + M - 2nK for aggregated bucket index M
    let shift = x as i64 - 2 * n as i64 * k_b;
    let floor = (n as i64 + 1) * b as i64;
    let y_max = shift + weights.len() as i64 - 1;
    let ln_a = if y_max >= floor {
        ln_composition_sums(n + 1, b, (y_max - floor) as usize)
    } else {
        Vec::new()
    };
    let mut terms = Vec::new();
    for (big_m, &w) in weights.iter().enumerate() {
        let y = shift + big_m as i64;
        if y < floor || w == 0.0 {
            continue;
        }
        terms.push(w.ln() + ln_a[(y - floor) as usize]);
    }
    let xf = x as f64;
    let ln_value = -(2.0 / 3.0) * xf
        + (4.0 / 3.0) * n as f64 * k_b as f64
        + crate::logweight::log_sum_exp(&terms);
    let ln_bound = -(2.0 / 3.0) * xf - xf.sqrt() - n as f64 * (b as f64).sqrt() / 8.0;
    let (bf, kf) = (b as f64, k_b as f64);
    let sufficient_exponent = -bf.sqrt() / 8.0
        + (4.0 / 3.0) * kf
        + (2.0 * kf / n as f64).sqrt()
        + 1.0
        + ((2.0 / 3.0) * (bf + kf)).ln();
    Ok(LogBoundCheck {
        ln_value,
        ln_bound,
        holds: ln_value <= ln_bound + ROUNDING_SLACK * ln_bound.abs().max(1.0),
        sufficient_exponent,
    })
}
