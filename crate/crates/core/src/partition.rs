//! Partition functions of the pinning model and the charge-indexed upper
//! bound, evaluated in log space, plus Monte Carlo free-energy estimates.

use crate::environment::{replica_rng, sample_environment_with, ChargeLaw, Environment};
use crate::error::{invalid, Error, Result};
use crate::logweight::{log_renewal_dp, LogWeight};
use crate::numeric::inv_pow_three_halves;
use crate::renewal::{homogeneous_pinning_free_energy, m_factor, InterArrivalLaw, RenewalFunction};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `E[exp(sum_n ω_n 1{n in τ}) 1{N in τ}]` for sites `ω_1..ω_N`.
pub fn exact_partition(sites: &[u64], k: &InterArrivalLaw) -> Result<LogWeight> {
    let n = sites.len();
    if n == 0 {
        return invalid("need at least one site");
    }
    if n > k.n_max() {
        return invalid(format!("{n} sites exceed the law horizon {}", k.n_max()));
    }
    let probs = k.masses();
    let logs = log_renewal_dp(n, |m| sites[m - 1] as f64, |i, j| probs[j - i]);
    Ok(LogWeight::from_ln(logs[n]))
}

/// Charge-indexed partition function `𝒵_n(ω, C)`: sum over charge subsets
/// ending at charge `n` of `prod e^{η_j} C / (t_j - t_i)^{3/2}`.
pub fn charge_partition(env: &Environment, n: usize, c: f64) -> Result<LogWeight> {
    Ok(LogWeight::from_ln(
        *charge_partition_profile(env, n, c)?.last().unwrap(),
    ))
}

/// `ln 𝒵_j(ω, C)` for `j = 0..=n` (with `𝒵_0 = 1`).
pub fn charge_partition_profile(env: &Environment, n: usize, c: f64) -> Result<Vec<f64>> {
    if n == 0 || n > env.len() {
        return invalid(format!("charge count {n} outside 1..={}", env.len()));
    }
    if !(c > 0.0) || !c.is_finite() {
        return invalid(format!("constant must be positive and finite, got {c}"));
    }
    let t: Vec<f64> = env.locations()[..=n].iter().map(|&x| x as f64).collect();
    let etas = env.etas();
    Ok(log_renewal_dp(
        n,
        |j| etas[j - 1] as f64,
        |i, j| c * inv_pow_three_halves(t[j] - t[i]),
    ))
}

/// Exact partition function up to the last charge against the charge-indexed
/// bound built with the renewal-function constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiaoCheck {
    pub exact: LogWeight,
    pub bound: LogWeight,
    pub holds: bool,
    /// `ln bound - ln exact`; nonnegative when the inequality holds.
    pub log_margin: f64,
}

/// Compares `𝚉_{t_n, ω}` with `𝒵_n(ω, 𝒞)` where `𝒞 = u.cal_c()`.
pub fn miao_check(
    env: &Environment,
    k: &InterArrivalLaw,
    u: &RenewalFunction,
) -> Result<MiaoCheck> {
    let span = env.span();
    if span as usize > k.n_max() || span as usize > u.n_max() {
        return invalid(format!(
            "environment span {span} exceeds the renewal horizon"
        ));
    }
    let exact = exact_partition(&env.to_sites(span)?, k)?;
    let bound = charge_partition(env, env.len(), u.cal_c())?;
    let log_margin = bound.ln() - exact.ln();
    Ok(MiaoCheck {
        exact,
        bound,
        holds: log_margin >= -1e-12 * bound.ln().abs().max(1.0),
        log_margin,
    })
}

/// Log-weight of paths that return to zero exactly at every charge:
/// `β n + sum_l ln K⁺(t_l - t_{l-1})`. The factor for the excursion after the
/// last charge is left out.
pub fn strategy_lower_bound(
    env: &Environment,
    beta: u64,
    k_plus: &InterArrivalLaw,
) -> Result<LogWeight> {
    if let Some(k) = env.etas().iter().position(|&e| e != beta) {
        return invalid(format!(
            "charge {} has intensity {} instead of {beta}",
            k + 1,
            env.etas()[k]
        ));
    }
    let mut total = beta as f64 * env.len() as f64;
    for &gap in env.gaps() {
        if gap as usize > k_plus.n_max() {
            return invalid(format!(
                "gap {gap} beyond the law horizon {}",
                k_plus.n_max()
            ));
        }
        let mass = k_plus.mass(gap as usize);
        if mass == 0.0 {
            return Err(Error::InfeasibleStrategy { gap });
        }
        total += mass.ln();
    }
    Ok(LogWeight::from_ln(total))
}

/// Replica average of `(1/t_n) ln 𝒵_n(ω, C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    /// Standard error of the mean; absent for a single replica.
    pub stderr: Option<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub n_charges: usize,
    pub replicas: usize,
    pub seed: u64,
    pub t_n_mean: f64,
    /// Per-replica values in replica order.
    pub samples: Vec<f64>,
}

impl FreeEnergyEstimate {
    /// `value > 3 stderr`; with one replica, `value > 0`.
    pub fn is_positive(&self) -> bool {
        self.value > 3.0 * self.stderr.unwrap_or(0.0)
    }
}

/// Monte Carlo estimate of `lim (1/t_n) ln 𝒵_n(ω, C)` over `replicas`
/// environments. Replica `r` uses RNG stream `r` of `seed`; the result does
/// not depend on the number of worker threads.
pub fn free_energy_estimate(
    law: &ChargeLaw,
    c: f64,
    n_charges: usize,
    replicas: usize,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    if replicas == 0 {
        return invalid("need at least one replica");
    }
    let per_replica: Vec<(f64, f64)> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let env = sample_environment_with(law, n_charges, &mut replica_rng(seed, r))?;
            let t_n = env.span() as f64;
            let z = charge_partition(&env, n_charges, c)?;
            Ok((z.ln() / t_n, t_n))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<f64> = per_replica.iter().map(|s| s.0).collect();
    let r = replicas as f64;
    let value = samples.iter().sum::<f64>() / r;
    let stderr = (replicas > 1).then(|| {
        let var = samples.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    });
    let t_n_mean = per_replica.iter().map(|s| s.1).sum::<f64>() / r;
    Ok(FreeEnergyEstimate {
        value,
        stderr,
        c,
        n_charges,
        replicas,
        seed,
        t_n_mean,
        samples,
    })
}

/// Annealed free energy: the homogeneous model with reward `ln M(β, p)`.
pub fn exact_free_energy_annealed(beta: f64, p: f64, k: &InterArrivalLaw) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("density {p} is not a probability"));
    }
    homogeneous_pinning_free_energy(k, m_factor(beta, p).ln())
}
