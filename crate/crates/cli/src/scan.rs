//! Bisection for the localization threshold in the charge density at fixed
//! intensity, with a statistical positivity test.

use pinlab::environment::ChargeLaw;
use pinlab::partition::{free_energy_estimate, FreeEnergyEstimate};
use pinlab::renewal::annealed_critical_p;
use pinlab::{Error, Result};
use serde::Serialize;

/// Bisection steps are capped here.
pub const MAX_DEPTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanSizes {
    pub n_charges: usize,
    pub replicas: usize,
    pub depth: usize,
}

/// One free-energy evaluation during the bisection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanStep {
    pub beta: u64,
    pub p: f64,
    pub value: f64,
    pub stderr: f64,
    pub localized: bool,
}

impl ScanStep {
    fn new(beta: u64, p: f64, est: &FreeEnergyEstimate) -> Self {
        Self {
            beta,
            p,
            value: est.value,
            stderr: est.stderr.unwrap_or(f64::NAN),
            localized: est.is_positive(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub beta: u64,
    pub p_low: f64,
    pub p_high: f64,
    /// Geometric midpoint of the final bracket.
    pub p_c_est: f64,
    pub f_low: f64,
    pub stderr_low: f64,
    pub f_high: f64,
    pub stderr_high: f64,
    /// `-ln(p_c_est) / beta`.
    pub slope: f64,
    /// Half the bracket width in slope units plus `1/beta`.
    pub tau: f64,
    pub slope_in_range: bool,
    pub p_annealed: f64,
    pub above_annealed: bool,
    pub n_charges: usize,
    pub replicas: usize,
    pub seed: u64,
    #[serde(skip)]
    pub steps: Vec<ScanStep>,
}

impl ScanResult {
    /// `f(low)` is not declared positive and `f(high)` is.
    pub fn bracket_ok(&self) -> bool {
        self.f_low <= 3.0 * self.stderr_low && self.f_high > 3.0 * self.stderr_high
    }
}

fn evaluate(beta: u64, p: f64, c: f64, sizes: &ScanSizes, seed: u64) -> Result<ScanStep> {
    let law = ChargeLaw::two_point(beta, p)?;
    let est = free_energy_estimate(&law, c, sizes.n_charges, sizes.replicas, seed)?;
    Ok(ScanStep::new(beta, p, &est))
}

/// For each `beta`, bisects `p` on a log scale between `p^a(beta)/2` and 1.
/// Every evaluation uses the same seed, so the replicas share environments
/// up to the density.
pub fn scan_critical(
    betas: &[u64],
    sizes: &ScanSizes,
    c: f64,
    seed: u64,
) -> Result<Vec<ScanResult>> {
    if sizes.replicas < 2 {
        return Err(Error::InvalidArgument(
            "the positivity test needs at least two replicas".into(),
        ));
    }
    if sizes.depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "depth {} above the cap {MAX_DEPTH}",
            sizes.depth
        )));
    }
    betas
        .iter()
        .map(|&beta| scan_one(beta, sizes, c, seed))
        .collect()
}

fn scan_one(beta: u64, sizes: &ScanSizes, c: f64, seed: u64) -> Result<ScanResult> {
    let p_annealed = annealed_critical_p(beta as f64)?;
    let mut low = evaluate(beta, p_annealed / 2.0, c, sizes, seed)?;
    let mut high = evaluate(beta, 1.0, c, sizes, seed)?;
    let mut steps = vec![low.clone(), high.clone()];
    if low.localized || !high.localized {
        return Err(Error::Scan(format!(
            "beta {beta}: initial interval does not bracket: f({:.3e}) = {:.3e} ± {:.1e}, f(1) = {:.3e} ± {:.1e}",
            low.p, low.value, low.stderr, high.value, high.stderr
        )));
    }
    for _ in 0..sizes.depth {
        let mid = evaluate(beta, (low.p * high.p).sqrt(), c, sizes, seed)?;
        steps.push(mid.clone());
        if mid.localized {
            high = mid;
        } else {
            low = mid;
        }
    }
    let p_c_est = (low.p * high.p).sqrt();
    let slope = -p_c_est.ln() / beta as f64;
    let tau = (high.p / low.p).ln() / (2.0 * beta as f64) + 1.0 / beta as f64;
    Ok(ScanResult {
        beta,
        p_low: low.p,
        p_high: high.p,
        p_c_est,
        f_low: low.value,
        stderr_low: low.stderr,
        f_high: high.value,
        stderr_high: high.stderr,
        slope,
        tau,
        slope_in_range: slope >= 2.0 / 3.0 - tau && slope <= 1.0 + tau,
        p_annealed,
        above_annealed: p_annealed <= p_c_est,
        n_charges: sizes.n_charges,
        replicas: sizes.replicas,
        seed,
        steps,
    })
}
