//! Charge laws, charge environments and their seeded sampling.
//!
//! Sampling uses `ChaCha8Rng` seeded through `SeedableRng::seed_from_u64`,
//! with one ChaCha stream per replica (`set_stream`). Given the same law,
//! size, seed and stream the output is identical on every platform.

use crate::error::{invalid, Error, Result};
use crate::numeric::compensated_sum;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};

/// Tolerance on `mass0 + sum(atoms) + lost_mass = 1`.
const MASS_TOLERANCE: f64 = 1e-9;

/// A law on `{0} ∪ {b, b+1, ..., x_max}` with explicit truncation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeLaw {
    level: u64,
    mass0: f64,
    /// `atoms[i] = mu(level + i)`
    atoms: Vec<f64>,
    lost_mass: f64,
}

impl ChargeLaw {
    /// `atoms[i]` is the mass of `level + i`.
    pub fn new(level: u64, mass0: f64, atoms: Vec<f64>, lost_mass: f64) -> Result<Self> {
        if level < 1 {
            return invalid("charge level must be at least 1");
        }
        for (name, v) in [("mass0", mass0), ("lost_mass", lost_mass)] {
            if !(0.0..=1.0).contains(&v) {
                return invalid(format!("{name} = {v} is not a probability"));
            }
        }
        if let Some(bad) = atoms.iter().find(|a| !(**a >= 0.0)) {
            return invalid(format!("negative or NaN atom {bad}"));
        }
        let total = mass0 + compensated_sum(atoms.iter().copied()) + lost_mass;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return invalid(format!("masses sum to {total}, expected 1"));
        }
        let mut atoms = atoms;
        while atoms.len() > 1 && atoms.last() == Some(&0.0) {
            atoms.pop();
        }
        Ok(Self {
            level,
            mass0,
            atoms,
            lost_mass,
        })
    }

    /// Law putting mass `p` on `level` and `1 - p` on zero.
    pub fn two_point(level: u64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return invalid(format!("density {p} is not a probability"));
        }
        Self::new(level, 1.0 - p, vec![p], 0.0)
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn mass0(&self) -> f64 {
        self.mass0
    }

    pub fn lost_mass(&self) -> f64 {
        self.lost_mass
    }

    /// Largest charge carried by the atoms.
    pub fn x_max(&self) -> u64 {
        self.level + self.atoms.len() as u64 - 1
    }

    /// Masses of `level, level + 1, ..., x_max`.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// `mu(x)`; zero outside the support.
    pub fn mass(&self, x: u64) -> f64 {
        if x == 0 {
            return self.mass0;
        }
        if x < self.level {
            return 0.0;
        }
        self.atoms
            .get((x - self.level) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// `c_b = mu([b, inf))` on the represented support.
    pub fn c_b(&self) -> f64 {
        compensated_sum(self.atoms.iter().copied())
    }

    /// `c~_b = mu([b + 1, inf))` on the represented support.
    pub fn c_tilde_b(&self) -> f64 {
        compensated_sum(self.atoms.iter().skip(1).copied())
    }

    /// `E[omega_1]` over the represented support.
    pub fn mean(&self) -> f64 {
        compensated_sum(
            self.atoms
                .iter()
                .enumerate()
                .map(|(i, a)| a * (self.level + i as u64) as f64),
        )
    }

    /// Iterator over `(x, mu(x))` for the positive atoms.
    pub fn positive_atoms(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.atoms
            .iter()
            .enumerate()
            .map(move |(i, &a)| (self.level + i as u64, a))
    }
}

/// `mu = (1 - e^{-c beta}) delta_0 + e^{-c beta} delta_beta` for integer `beta`.
pub fn mu_beta(beta: f64, c: f64) -> Result<ChargeLaw> {
    if !(beta >= 1.0) || beta.fract() != 0.0 || beta > u64::MAX as f64 {
        return invalid(format!(
            "charge intensity must be a positive integer, got {beta}"
        ));
    }
    if !(c > 0.0) {
        return invalid(format!("density exponent must be positive, got {c}"));
    }
    let p = (-c * beta).exp();
    ChargeLaw::new(beta as u64, -(-c * beta).exp_m1(), vec![p], 0.0)
}

/// Sequence of positive charges: gaps `Δ_k >= 1` and intensities `η_k >= 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Environment {
    level: u64,
    gaps: Vec<u64>,
    etas: Vec<u64>,
    /// `locations[k] = t_k`, with `t_0 = 0` at index 0.
    locations: Vec<u64>,
}

impl Environment {
    /// Builds an environment from gaps and intensities. `level` is recorded
    /// as the minimum intensity.
    pub fn new(gaps: Vec<u64>, etas: Vec<u64>) -> Result<Self> {
        let level = etas.iter().copied().min().unwrap_or(1);
        Self::with_level(level, gaps, etas)
    }

    /// Like [`new`](Self::new) with an explicit level, which must not exceed
    /// any intensity.
    pub fn with_level(level: u64, gaps: Vec<u64>, etas: Vec<u64>) -> Result<Self> {
        if gaps.len() != etas.len() {
            return invalid(format!(
                "{} gaps but {} intensities",
                gaps.len(),
                etas.len()
            ));
        }
        if gaps.is_empty() {
            return Err(Error::DegenerateEnvironment("no positive charges".into()));
        }
        if let Some(k) = gaps.iter().position(|&g| g == 0) {
            return invalid(format!("gap {} is zero", k + 1));
        }
        if let Some(k) = etas.iter().position(|&e| e == 0 || e < level) {
            return invalid(format!(
                "intensity {} = {} is below level {level}",
                k + 1,
                etas[k]
            ));
        }
        let mut locations = Vec::with_capacity(gaps.len() + 1);
        locations.push(0u64);
        let mut t = 0u64;
        for &g in &gaps {
            t = t
                .checked_add(g)
                .ok_or_else(|| Error::Overflow("charge location exceeds u64".into()))?;
            locations.push(t);
        }
        Ok(Self {
            level,
            gaps,
            etas,
            locations,
        })
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    /// Number of positive charges.
    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    /// `Δ_1..Δ_n` (index 0 holds `Δ_1`).
    pub fn gaps(&self) -> &[u64] {
        &self.gaps
    }

    /// `η_1..η_n` (index 0 holds `η_1`).
    pub fn etas(&self) -> &[u64] {
        &self.etas
    }

    /// `t_0 = 0, t_1, ..., t_n`.
    pub fn locations(&self) -> &[u64] {
        &self.locations
    }

    /// `t_k` for `k = 0..=n`.
    pub fn t(&self, k: usize) -> u64 {
        self.locations[k]
    }

    /// Location of the last charge.
    pub fn span(&self) -> u64 {
        *self.locations.last().unwrap()
    }

    /// Site-level empirical law of `ω_1..ω_{t_N}`.
    pub fn empirical_law(&self) -> Result<ChargeLaw> {
        let span = self.span() as f64;
        let top = *self.etas.iter().max().unwrap();
        let mut counts = vec![0u64; (top - self.level + 1) as usize];
        for &e in &self.etas {
            counts[(e - self.level) as usize] += 1;
        }
        let atoms = counts.iter().map(|&k| k as f64 / span).collect();
        ChargeLaw::new(self.level, 1.0 - self.len() as f64 / span, atoms, 0.0)
    }

    /// Environment restricted to its first `n` charges.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return invalid(format!("prefix length {n} outside 1..={}", self.len()));
        }
        Self::with_level(self.level, self.gaps[..n].to_vec(), self.etas[..n].to_vec())
    }

    /// Site values `ω_1..ω_N`.
    pub fn to_sites(&self, horizon: u64) -> Result<Vec<u64>> {
        if horizon > self.span() {
            return invalid(format!(
                "horizon {horizon} beyond last charge at {}",
                self.span()
            ));
        }
        let mut sites = vec![0u64; horizon as usize];
        for (k, &eta) in self.etas.iter().enumerate() {
            let t = self.locations[k + 1];
            if t > horizon {
                break;
            }
            sites[t as usize - 1] = eta;
        }
        Ok(sites)
    }

    /// Inverse of [`to_sites`](Self::to_sites) up to the last positive site.
    pub fn from_sites(sites: &[u64]) -> Result<Self> {
        let mut gaps = Vec::new();
        let mut etas = Vec::new();
        let mut last = 0u64;
        for (j, &w) in sites.iter().enumerate() {
            if w > 0 {
                let t = j as u64 + 1;
                gaps.push(t - last);
                etas.push(w);
                last = t;
            }
        }
        if etas.is_empty() {
            return Err(Error::DegenerateEnvironment("all sites are zero".into()));
        }
        Self::new(gaps, etas)
    }

    /// Text format: header `#pinlab-env v1 level=<b>` then `Δ_k,η_k` lines.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#pinlab-env v1 level={}", self.level)?;
        for (g, e) in self.gaps.iter().zip(&self.etas) {
            writeln!(out, "{g},{e}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let level = header
            .trim()
            .strip_prefix("#pinlab-env v1 level=")
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "expected `#pinlab-env v1 level=<b>`".into(),
            })?;
        let mut gaps = Vec::new();
        let mut etas = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line_no = i + 2;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let (g, e) = trimmed
                .split_once(',')
                .ok_or_else(|| err("expected `gap,intensity`".into()))?;
            gaps.push(
                g.trim()
                    .parse::<u64>()
                    .map_err(|e| err(format!("bad gap: {e}")))?,
            );
            etas.push(
                e.trim()
                    .parse::<u64>()
                    .map_err(|e| err(format!("bad intensity: {e}")))?,
            );
        }
        Self::with_level(level, gaps, etas).map_err(|e| match e {
            Error::InvalidArgument(message) | Error::DegenerateEnvironment(message) => {
                Error::Parse { line: 0, message }
            }
            other => other,
        })
    }
}

/// RNG for replica `stream` of a run seeded with `seed`.
pub fn replica_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Samples `n_charges` i.i.d. gaps and intensities from `law` on stream 0.
pub fn sample_environment(law: &ChargeLaw, n_charges: usize, seed: u64) -> Result<Environment> {
    sample_environment_with(law, n_charges, &mut replica_rng(seed, 0))
}

/// Samples from an explicit RNG: gaps geometric on `{1, 2, ...}` with success
/// probability `c_b`, intensities from `mu(.) / c_b` on `{b, ...}`.
pub fn sample_environment_with<R: Rng + ?Sized>(
    law: &ChargeLaw,
    n_charges: usize,
    rng: &mut R,
) -> Result<Environment> {
    if n_charges == 0 {
        return invalid("need at least one charge");
    }
    let c = law.c_b();
    if !(c > 0.0) {
        return invalid("charge law has no positive atoms");
    }
    let gap = GeometricGap::new(c.min(1.0));
    let intensity = if law.atoms().len() > 1 {
        Some(WeightedIndex::new(law.atoms()).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut gaps = Vec::with_capacity(n_charges);
    let mut etas = Vec::with_capacity(n_charges);
    for _ in 0..n_charges {
        gaps.push(gap.sample(rng));
        let offset = intensity.as_ref().map_or(0, |w| w.sample(rng) as u64);
        etas.push(law.level() + offset);
    }
    Environment::with_level(law.level(), gaps, etas)
}

/// Geometric law on `{1, 2, ...}` with `P(Δ = k) = c (1 - c)^{k-1}`, sampled
/// by inversion.
#[derive(Debug, Clone, Copy)]
pub struct GeometricGap {
    /// `ln(1 - c)`, or `-inf` when `c = 1`.
    ln_fail: f64,
}

impl GeometricGap {
    pub fn new(c: f64) -> Self {
        assert!(
            c > 0.0 && c <= 1.0,
            "geometric parameter {c} outside (0, 1]"
        );
        Self {
            ln_fail: (-c).ln_1p(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.ln_fail == f64::NEG_INFINITY {
            return 1;
        }
        // 1 - U lies in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        let k = (u.ln() / self.ln_fail).floor();
        if k >= (u64::MAX - 1) as f64 {
            u64::MAX - 1
        } else {
            1 + k as u64
        }
    }

    /// `P(Δ <= k)`.
    pub fn cdf(&self, k: u64) -> f64 {
        -(self.ln_fail * k as f64).exp_m1()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn mu_beta_examples() {
        let law = mu_beta(6.0, 0.7).unwrap();
        assert!((law.mass(6) / (-4.2f64).exp() - 1.0).abs() < 1e-14);
        assert!((law.mass(6) - 1.4996e-2).abs() < 1e-6);
        assert_eq!(law.c_b(), law.mass(6));
        assert_eq!(law.c_tilde_b(), 0.0);
        assert!(mu_beta(6.0, 200.0).unwrap().mass0() >= 1.0 - f64::EPSILON);
        assert!(mu_beta(6.5, 0.7).is_err());
        assert!(mu_beta(0.0, 0.7).is_err());
        assert!(mu_beta(3.0, 0.0).is_err());
    }

    #[test]
    fn charge_law_mass_identity() {
        let law = ChargeLaw::new(3, 0.5, vec![0.2, 0.0, 0.1], 0.2).unwrap();
        assert!((law.mass0() + law.c_b() + law.lost_mass() - 1.0).abs() < 1e-12);
        assert_eq!(law.mass(1), 0.0);
        assert_eq!(law.mass(5), 0.1);
        assert_eq!(law.x_max(), 5);
        assert!((law.c_tilde_b() - 0.1).abs() < 1e-15);
        assert!(ChargeLaw::new(3, 0.5, vec![0.2], 0.0).is_err());
    }

    #[test]
    fn sites_round_trip() {
        let env = Environment::new(vec![2], vec![5]).unwrap();
        assert_eq!(env.to_sites(2).unwrap(), vec![0, 5]);
        assert_eq!(env.to_sites(1).unwrap(), vec![0]);
        assert!(env.to_sites(3).is_err());
        for (gaps, etas) in [
            (vec![2], vec![5]),
            (vec![1, 1, 1], vec![3, 4, 3]),
            (vec![4, 1, 7, 2], vec![2, 9, 2, 3]),
        ] {
            let env = Environment::new(gaps, etas).unwrap();
            let sites = env.to_sites(env.span()).unwrap();
            assert_eq!(Environment::from_sites(&sites).unwrap(), env);
        }
        assert!(matches!(
            Environment::from_sites(&[0, 0, 0]),
            Err(Error::DegenerateEnvironment(_))
        ));
    }

    #[test]
    fn file_round_trip_and_validation() {
        let env = Environment::with_level(3, vec![4, 1, 7], vec![3, 5, 3]).unwrap();
        let mut buf = Vec::new();
        env.write(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("#pinlab-env v1 level=3\n4,3\n"));
        assert_eq!(Environment::read(&buf[..]).unwrap(), env);
        assert!(Environment::read(&b"#pinlab-env v1 level=3\n0,3\n"[..]).is_err());
        assert!(Environment::read(&b"#pinlab-env v1 level=3\n1,2\n"[..]).is_err());
        assert!(matches!(
            Environment::read(&b"garbage\n"[..]),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Environment::read(&b"#pinlab-env v1 level=3\n1;3\n"[..]),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn dense_law_has_unit_gaps() {
        let law = ChargeLaw::two_point(4, 1.0).unwrap();
        let env = sample_environment(&law, 1000, 1).unwrap();
        assert!(env.gaps().iter().all(|&g| g == 1));
        assert!(env.etas().iter().all(|&e| e == 4));
    }

    #[test]
    fn sampling_is_deterministic_per_seed_and_stream() {
        let law = ChargeLaw::new(2, 0.6, vec![0.3, 0.1], 0.0).unwrap();
        let a = sample_environment(&law, 500, 42).unwrap();
        let b = sample_environment(&law, 500, 42).unwrap();
        let c = sample_environment(&law, 500, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s1 = sample_environment_with(&law, 500, &mut replica_rng(42, 1)).unwrap();
        assert_ne!(a, s1);
        assert!(sample_environment(&ChargeLaw::two_point(2, 0.0).unwrap(), 5, 1).is_err());
    }

    #[test]
    fn gap_mean_within_three_standard_errors() {
        let c = 0.15;
        let law = ChargeLaw::two_point(3, c).unwrap();
        let env = sample_environment(&law, 100_000, 7).unwrap();
        let n = env.len() as f64;
        let mean = env.gaps().iter().map(|&g| g as f64).sum::<f64>() / n;
        let sd = ((1.0 - c) / (c * c)).sqrt();
        assert!((mean - 1.0 / c).abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn gap_law_passes_kolmogorov_smirnov() {
        let c = 0.05;
        let law = ChargeLaw::two_point(3, c).unwrap();
        let env = sample_environment(&law, 100_000, 11).unwrap();
        let mut gaps = env.gaps().to_vec();
        gaps.sort_unstable();
        let n = gaps.len() as f64;
        let geo = GeometricGap::new(c);
        let mut d: f64 = 0.0;
        let mut i = 0;
        while i < gaps.len() {
            let k = gaps[i];
            let below = i as f64 / n;
            while i < gaps.len() && gaps[i] == k {
                i += 1;
            }
            let at = i as f64 / n;
            // compare on both sides of the jump at k
            d = d
                .max((at - geo.cdf(k)).abs())
                .max((below - geo.cdf(k - 1)).abs());
        }
        assert!(d < 1.628 / n.sqrt(), "KS distance {d}");
    }

    #[test]
    fn intensity_law_passes_chi_square() {
        let atoms = vec![0.12, 0.05, 0.02, 0.008, 0.002];
        let c: f64 = atoms.iter().sum();
        let law = ChargeLaw::new(5, 1.0 - c, atoms.clone(), 0.0).unwrap();
        let env = sample_environment(&law, 100_000, 3).unwrap();
        let mut counts = vec![0f64; atoms.len()];
        for &e in env.etas() {
            counts[(e - 5) as usize] += 1.0;
        }
        let n = env.len() as f64;
        let stat: f64 = counts
            .iter()
            .zip(&atoms)
            .map(|(o, a)| {
                let e = n * a / c;
                (o - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new((atoms.len() - 1) as f64)
            .unwrap()
            .inverse_cdf(0.99);
        assert!(stat < crit, "chi-square {stat} >= {crit}");
    }
}
