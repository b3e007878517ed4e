//! Terminating renewal processes: inter-arrival laws, renewal functions and
//! the exactly solvable homogeneous pinning model.

use crate::error::{invalid, Error, Result};
use crate::logweight::log_sum_exp;
use crate::numeric::compensated_sum;
use std::io::{BufRead, Write};

/// Default truncation horizon for inter-arrival laws.
pub const DEFAULT_HORIZON: usize = 1 << 16;

/// A (possibly terminating) inter-arrival law `K(n)`, `n = 1..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterArrivalLaw {
    /// `probs[n] = K(n)`; `probs[0]` is always zero.
    probs: Vec<f64>,
    delta: f64,
    alpha: f64,
    c_k: f64,
    /// Mass of the untruncated law beyond `n_max`, when known.
    tail_mass: f64,
}

impl InterArrivalLaw {
    /// Builds a law from masses `K(1..=n_max)` given as `masses[n-1]`.
    pub fn from_masses(masses: &[f64], alpha: f64) -> Result<Self> {
        if masses.is_empty() {
            return invalid("inter-arrival law needs at least one mass");
        }
        if !(alpha > 0.0) {
            return invalid(format!("tail exponent must be positive, got {alpha}"));
        }
        if let Some((i, &m)) = masses.iter().enumerate().find(|(_, m)| !(**m >= 0.0)) {
            return invalid(format!("K({}) = {m} is not a probability", i + 1));
        }
        let mut probs = Vec::with_capacity(masses.len() + 1);
        probs.push(0.0);
        probs.extend_from_slice(masses);
        let delta = compensated_sum(masses.iter().copied());
        if delta > 1.0 + 1e-12 {
            return invalid(format!("total mass {delta} exceeds one"));
        }
        let n_max = masses.len();
        let c_k = probs[n_max] * (n_max as f64).powf(1.0 + alpha);
        Ok(Self {
            probs,
            delta,
            alpha,
            c_k,
            tail_mass: 0.0,
        })
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// `K(n)`, zero outside `1..=n_max`.
    pub fn mass(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Masses indexed by `n`, with a zero at index 0.
    pub fn masses(&self) -> &[f64] {
        &self.probs
    }

    /// Total mass on the truncated range.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Tail constant `C_K` in `K(n) ~ C_K / n^{1+alpha}`.
    pub fn c_k(&self) -> f64 {
        self.c_k
    }

    /// Mass the untruncated law puts beyond `n_max` (zero for laws that are
    /// normalized on the truncated range).
    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Relative deviation of `K(n) n^{1+alpha}` from `C_K` at `n_max/2` and
    /// `n_max` (largest of the two). Only meaningful on the support of the law.
    pub fn tail_constant_deviation(&self) -> f64 {
        let n_max = self.n_max();
        let mut n_half = (n_max / 2).max(1);
        let mut n_end = n_max;
        // periodic laws live on even sites
        if self.mass(n_half) == 0.0 {
            n_half = (n_half + 1).min(n_max);
        }
        if self.mass(n_end) == 0.0 && n_end > 1 {
            n_end -= 1;
        }
        [n_half, n_end]
            .iter()
            .map(|&n| {
                let v = self.mass(n) * (n as f64).powf(1.0 + self.alpha);
                (v / self.c_k - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// CSV with header `n,mass` and one row per `n = 1..=n_max`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,mass")?;
        for n in 1..=self.n_max() {
            writeln!(out, "{n},{:.16e}", self.probs[n])?;
        }
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: BufRead>(input: R, alpha: f64) -> Result<Self> {
        let masses = read_indexed_csv(input, "n,mass", 1)?;
        Self::from_masses(&masses, alpha)
    }
}

/// First-return law to zero of the simple random walk restricted to the
/// non-negative half line: `K(2n) = Catalan(n-1) / 4^n`, zero on odd sites.
pub fn srw_first_return_law(n_max: usize) -> Result<InterArrivalLaw> {
    if n_max < 2 || !n_max.is_multiple_of(2) {
        return invalid(format!(
            "SRW horizon must be even and at least 2, got {n_max}"
        ));
    }
    let half = n_max / 2;
    let mut probs = vec![0.0; n_max + 1];
    // Catalan numbers fit in u128 up to n = 67; the quotient by a power of
    // two is then exact up to the final rounding.
    const EXACT_UP_TO: usize = 60;
    let mut catalan: u128 = 1; // Catalan(n - 1)
    let mut k = 0.25_f64;
    for n in 1..=half {
        if n <= EXACT_UP_TO {
            k = catalan as f64 / 4f64.powi(n as i32);
            let m = n as u128; // Catalan(n) = Catalan(n-1) * 2(2n-1) / (n+1)
            catalan = catalan * 2 * (2 * m - 1) / (m + 1);
        } else {
            // K(2n+2)/K(2n) = (2n-1) / (2n+2)
            let m = (n - 1) as f64;
            k *= (2.0 * m - 1.0) / (2.0 * m + 2.0);
        }
        probs[2 * n] = k;
    }
    let delta = compensated_sum(probs.iter().copied());
    Ok(InterArrivalLaw {
        probs,
        delta,
        alpha: 0.5,
        // K(2n) ~ 1/(4 sqrt(pi)) n^{-3/2}, i.e. 1/sqrt(2 pi) m^{-3/2} on even m
        c_k: 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
        tail_mass: 0.5 - delta,
    })
}

/// Pure power law `K(n) = delta n^{-(1+alpha)} / Z` normalized on `1..=n_max`.
pub fn power_law_law(alpha: f64, delta: f64, n_max: usize) -> Result<InterArrivalLaw> {
    if !(alpha > 0.0) {
        return invalid(format!("tail exponent must be positive, got {alpha}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!(
            "total mass must lie in (0, 1) for a terminating law, got {delta}"
        ));
    }
    if n_max < 1 {
        return invalid("horizon must be at least 1");
    }
    let z = compensated_sum((1..=n_max).map(|m| (m as f64).powf(-(1.0 + alpha))));
    let c_k = delta / z;
    let mut probs = Vec::with_capacity(n_max + 1);
    probs.push(0.0);
    probs.extend((1..=n_max).map(|n| c_k * (n as f64).powf(-(1.0 + alpha))));
    Ok(InterArrivalLaw {
        probs,
        delta,
        alpha,
        c_k,
        tail_mass: 0.0,
    })
}

/// Renewal function `U(n) = P(n in tau)` on `0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalFunction {
    u: Vec<f64>,
    cal_c: f64,
    cal_c_argmax: usize,
}

impl RenewalFunction {
    pub fn u(&self, n: usize) -> f64 {
        self.u[n]
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn n_max(&self) -> usize {
        self.u.len() - 1
    }

    /// Smallest constant with `U(n) <= cal_c n^{-3/2}` on the computed range.
    pub fn cal_c(&self) -> f64 {
        self.cal_c
    }

    /// Where the maximum of `U(n) n^{3/2}` is attained.
    pub fn cal_c_argmax(&self) -> usize {
        self.cal_c_argmax
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,u")?;
        for (n, u) in self.u.iter().enumerate() {
            writeln!(out, "{n},{u:.16e}")?;
        }
        Ok(())
    }

    /// Reads `n,u` rows back; `cal_c` is recomputed from the values.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let u = read_indexed_csv(input, "n,u", 0)?;
        if u.first() != Some(&1.0) {
            return Err(Error::Parse {
                line: 2,
                message: "U(0) must be 1".into(),
            });
        }
        Ok(Self::from_values(u))
    }

    fn from_values(u: Vec<f64>) -> Self {
        let (cal_c_argmax, cal_c) = u
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, &v)| (n, v * (n as f64).powf(1.5)))
            .fold(
                (0, 0.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        Self {
            u,
            cal_c,
            cal_c_argmax,
        }
    }
}

/// `U(0) = 1`, `U(n) = sum_{m=1}^{n} K(m) U(n-m)`.
pub fn renewal_function(k: &InterArrivalLaw) -> RenewalFunction {
    let n_max = k.n_max();
    let probs = k.masses();
    let mut u = vec![0.0; n_max + 1];
    u[0] = 1.0;
    for n in 1..=n_max {
        let s: f64 = probs[1..=n]
            .iter()
            .zip(u[..n].iter().rev())
            .map(|(a, b)| a * b)
            .sum();
        u[n] = s;
    }
    RenewalFunction::from_values(u)
}

/// Free energy of the homogeneous pinning model with reward `h` per contact:
/// zero when `e^h delta <= 1`, otherwise the root `F` of
/// `sum_n K(n) e^{-F n + h} = 1`.
pub fn homogeneous_pinning_free_energy(k: &InterArrivalLaw, h: f64) -> Result<f64> {
    if !h.is_finite() {
        return invalid(format!("pinning reward must be finite, got {h}"));
    }
    let ln_delta = k.delta().ln();
    if h + ln_delta <= 0.0 {
        return Ok(0.0);
    }
    let upper = h - ln_delta + 1.0;
    if !upper.is_finite() || upper > 1e300 {
        return Err(Error::Overflow(format!(
            "root bracket [0, {upper}] is not representable"
        )));
    }
    let support: Vec<(f64, f64)> = k
        .masses()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(n, &m)| (n as f64, m.ln()))
        .collect();
    // ln sum_n K(n) e^{-F n} + h, strictly decreasing in F
    let excess = |f: f64| {
        let logs: Vec<f64> = support.iter().map(|&(n, lm)| lm - f * n).collect();
        log_sum_exp(&logs) + h
    };
    let (mut lo, mut hi) = (0.0, upper);
    if excess(hi) > 0.0 {
        return Err(Error::Overflow(format!(
            "bracket upper end {hi} does not enclose the root"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `M(beta, p) = p e^beta + (1 - p)`, the mean Boltzmann factor of a site.
pub fn m_factor(beta: f64, p: f64) -> f64 {
    1.0 + p * beta.exp_m1()
}

/// Annealed critical density `1 / (e^beta - 1)`.
pub fn annealed_critical_p(beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return invalid(format!("charge intensity must be positive, got {beta}"));
    }
    Ok(1.0 / beta.exp_m1())
}

fn read_indexed_csv<R: BufRead>(input: R, header: &str, first_index: usize) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let trimmed = line.trim();
        if i == 0 {
            if trimmed != header {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{header}`"),
                });
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (idx, val) = trimmed
            .split_once(',')
            .ok_or_else(|| parse_err("expected two comma-separated fields".into()))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad index: {e}")))?;
        let val: f64 = val
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad value: {e}")))?;
        if idx != first_index + values.len() {
            return Err(parse_err(format!(
                "expected index {}, found {idx}",
                first_index + values.len()
            )));
        }
        values.push(val);
    }
    if values.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive enumeration of +-1 walks of length `len`: probability
    /// that the walk stays strictly positive before returning to 0 at `len`.
    fn enumerate_first_return(len: u32) -> f64 {
        let mut count = 0u64;
        for bits in 0u64..(1 << len) {
            let mut s = 0i64;
            let mut ok = true;
            for i in 0..len {
                s += if bits >> i & 1 == 1 { 1 } else { -1 };
                if i + 1 < len && s <= 0 {
                    ok = false;
                    break;
                }
            }
            if ok && s == 0 {
                count += 1;
            }
        }
        count as f64 / 2f64.powi(len as i32)
    }

    #[test]
    fn srw_matches_path_enumeration() {
        let k = srw_first_return_law(16).unwrap();
        for len in 1..=16u32 {
            assert_eq!(
                k.mass(len as usize),
                enumerate_first_return(len),
                "length {len}"
            );
        }
        assert_eq!(k.mass(2), 0.25);
        assert_eq!(k.mass(4), 1.0 / 16.0);
        assert_eq!(k.mass(6), 1.0 / 32.0);
    }

    #[test]
    fn srw_total_mass_approaches_half() {
        let k = srw_first_return_law(10_000).unwrap();
        assert!((k.delta() - 0.5).abs() < 1e-2);
        assert!((k.delta() + k.tail_mass() - 0.5).abs() < 1e-15);
        assert!(k.tail_constant_deviation() < 0.05);
    }

    #[test]
    fn srw_rejects_short_or_odd_horizon() {
        assert!(matches!(
            srw_first_return_law(0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            srw_first_return_law(1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            srw_first_return_law(7),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn power_law_normalization_and_ratios() {
        let k = power_law_law(0.5, 0.5, 1).unwrap();
        assert_eq!(k.mass(1), 0.5);
        let k = power_law_law(0.5, 0.3, 1000).unwrap();
        assert!((compensated_sum(k.masses().iter().copied()) - 0.3).abs() < 1e-15);
        assert!((k.mass(100) / k.mass(400) - 8.0).abs() < 1e-12);
        assert!(k.tail_constant_deviation() < 1e-12);
    }

    #[test]
    fn power_law_rejects_non_terminating_mass() {
        assert!(matches!(
            power_law_law(0.5, 1.0, 10),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            power_law_law(0.5, 0.0, 10),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            power_law_law(0.0, 0.5, 10),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn renewal_function_first_terms() {
        let k = power_law_law(0.5, 0.6, 50).unwrap();
        let u = renewal_function(&k);
        assert_eq!(u.u(0), 1.0);
        assert_eq!(u.u(1), k.mass(1));
        assert!((u.u(2) - (k.mass(2) + k.mass(1).powi(2))).abs() < 1e-16);
    }

    #[test]
    fn renewal_identity_holds_with_compensated_check() {
        let k = power_law_law(0.5, 0.5, 2000).unwrap();
        let u = renewal_function(&k);
        for n in 1..=2000 {
            let s = compensated_sum((1..=n).map(|m| k.mass(m) * u.u(n - m)));
            assert!((s - u.u(n)).abs() <= 1e-12 * u.u(n), "n={n}");
        }
        let total = compensated_sum(u.values().iter().copied());
        assert!(total <= 1.0 / (1.0 - k.delta()));
    }

    #[test]
    fn renewal_function_asymptotics() {
        let n_max = 1 << 16;
        let k = power_law_law(0.5, 0.5, n_max).unwrap();
        let u = renewal_function(&k);
        let target = k.c_k() / (1.0 - k.delta()).powi(2);
        let observed = u.u(n_max) * (n_max as f64).powf(1.5);
        assert!(
            (observed / target - 1.0).abs() < 0.05,
            "{observed} vs {target}"
        );
        assert!(u.cal_c() >= observed);
    }

    #[test]
    fn homogeneous_boundary_and_single_atom() {
        let k = power_law_law(0.5, 0.4, 500).unwrap();
        let f = homogeneous_pinning_free_energy(&k, -k.delta().ln()).unwrap();
        assert_eq!(f, 0.0);
        let single = InterArrivalLaw::from_masses(&[0.3], 0.5).unwrap();
        let h = 2.0;
        let f = homogeneous_pinning_free_energy(&single, h).unwrap();
        assert!((f - (h.exp() * 0.3).ln()).abs() < 1e-10);
    }

    #[test]
    fn homogeneous_srw_threshold_at_two() {
        let k = srw_first_return_law(DEFAULT_HORIZON).unwrap();
        assert_eq!(homogeneous_pinning_free_energy(&k, 2f64.ln()).unwrap(), 0.0);
        assert_eq!(
            homogeneous_pinning_free_energy(&k, 1.9f64.ln()).unwrap(),
            0.0
        );
        assert!(homogeneous_pinning_free_energy(&k, 2.1f64.ln()).unwrap() > 0.0);
    }

    #[test]
    fn homogeneous_is_monotone_in_reward() {
        let k = power_law_law(0.5, 0.5, 4000).unwrap();
        let mut prev = 0.0;
        for i in 0..60 {
            let h = 0.5 + 0.02 * i as f64;
            let f = homogeneous_pinning_free_energy(&k, h).unwrap();
            assert!(f >= prev - 1e-10, "h={h}");
            prev = f;
        }
    }

    #[test]
    fn homogeneous_overflow_is_reported() {
        let k = power_law_law(0.5, 0.5, 10).unwrap();
        assert!(matches!(
            homogeneous_pinning_free_energy(&k, 1e305),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn annealed_point_examples() {
        assert!((annealed_critical_p(2f64.ln()).unwrap() - 1.0).abs() < 1e-15);
        assert!((annealed_critical_p(3f64.ln()).unwrap() - 0.5).abs() < 1e-15);
        for beta in [0.3, 1.0, 4.0, 9.0] {
            let p = annealed_critical_p(beta).unwrap();
            assert!((m_factor(beta, p) - 2.0).abs() < 1e-12);
        }
        assert!(annealed_critical_p(0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let k = srw_first_return_law(40).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let back = InterArrivalLaw::read_csv(&buf[..], 0.5).unwrap();
        assert_eq!(back.masses(), k.masses());
        let u = renewal_function(&k);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        assert_eq!(
            RenewalFunction::read_csv(&buf[..]).unwrap().values(),
            u.values()
        );
    }
}
