//! Deterministic flow of one-site charge laws and constants under the level
//! renormalization, with the free-energy upper bound and the domination
//! ratio tracked along the way.

use crate::bounds::ProofConstants;
use crate::environment::ChargeLaw;
use crate::error::{invalid, Error, Result};
use crate::numeric::{bucket_range, compensated_sum, CompensatedSum};
use crate::renorm::{lift_c, RenormParams};
use serde::Serialize;
use std::io::Write;

/// Laws whose positive mass falls below this are treated as exhausted.
pub const EXHAUSTION_FLOOR: f64 = 1e-250;

/// Gap buckets above this index use the continuum count.
const EXACT_BUCKETS: i64 = 40;

/// Where the level constants of a flow come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMode {
    /// `K_b` and `L_b` from the level formulas.
    LevelFormulas,
    /// Fixed `K` and `L` at every level.
    Overridden,
}

impl FlowMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowMode::LevelFormulas => "level-formulas",
            FlowMode::Overridden => "overridden",
        }
    }
}

/// Level constants as needed by the flow. `L` is kept as a logarithm since
/// at large levels it exceeds every integer type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowLevel {
    pub b: u64,
    pub k_b: i64,
    pub ln_l: f64,
    /// `L` itself when it fits in a `u64`.
    pub l_exact: Option<u64>,
    pub mode: FlowMode,
}

impl FlowLevel {
    /// `K_b = floor(K_0 + ln⁺(2𝒞) + 2 ln b)`, `L_b = floor(e^{(2/3)(b + K_b)})`.
    pub fn from_constants(b: u64, cal_c: f64, constants: &ProofConstants) -> Self {
        let k_b =
            (constants.k0 + (2.0 * cal_c).ln().max(0.0) + 2.0 * (b as f64).ln()).floor() as i64;
        let exponent = (2.0 / 3.0) * (b as f64 + k_b as f64);
        let l = exponent.exp().floor();
        let (ln_l, l_exact) = if l < 4.0e18 {
            (l.ln(), Some(l as u64))
        } else {
            (exponent, None)
        };
        Self {
            b,
            k_b,
            ln_l,
            l_exact,
            mode: FlowMode::LevelFormulas,
        }
    }

    pub fn overridden(b: u64, k_b: i64, l: u64) -> Self {
        Self {
            b,
            k_b,
            ln_l: (l as f64).ln(),
            l_exact: Some(l),
            mode: FlowMode::Overridden,
        }
    }

    pub fn from_params(params: &RenormParams) -> Self {
        let mode = if params.from_defaults {
            FlowMode::LevelFormulas
        } else {
            FlowMode::Overridden
        };
        Self {
            b: params.b,
            k_b: params.k_b,
            ln_l: (params.l_b as f64).ln(),
            l_exact: Some(params.l_b),
            mode,
        }
    }

    /// Largest gap bucket `floor(1.5 ln ℓ)` with `ℓ <= L`.
    fn max_bucket(&self) -> i64 {
        match self.l_exact {
            Some(l) => crate::numeric::log_bucket(l),
            None => (1.5 * self.ln_l).floor() as i64,
        }
    }

    /// `(1 - c)^L` and `1 - (1 - c)^L`.
    fn block_end_probability(&self, c: f64) -> (f64, f64) {
        let l = self.l_exact.map_or(self.ln_l.exp(), |l| l as f64);
        let ln_q = l * (-c).ln_1p();
        (ln_q.exp(), -ln_q.exp_m1())
    }

    /// `Σ (1 - c)^{ℓ - 1}` over gaps `ℓ <= L` with `floor(1.5 ln ℓ) = m`.
    fn bucket_geometric_mass(&self, m: i64, c: f64) -> f64 {
        let ln_r = (-c).ln_1p();
        let sum_range = |lo: f64, count: f64| -> f64 {
            if count <= 0.0 {
                return 0.0;
            }
            if c >= 1.0 {
                return if lo == 1.0 { 1.0 } else { 0.0 };
            }
            ((lo - 1.0) * ln_r).exp() * -(count * ln_r).exp_m1() / c
        };
        if m < EXACT_BUCKETS || self.l_exact.is_some() {
            let l_max = self.l_exact.unwrap_or(u64::MAX);
            return match bucket_range(m, l_max) {
                Some((lo, hi)) => sum_range(lo as f64, (hi - lo + 1) as f64),
                None => 0.0,
            };
        }
        let lo = ((2.0 / 3.0) * m as f64).exp().ceil();
        let hi = ((2.0 / 3.0) * (m + 1) as f64).exp().min(self.ln_l.exp());
        sum_range(lo, (hi - lo).ceil())
    }
}

/// Outcome of one application of the law map.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub law: ChargeLaw,
    pub q_b: f64,
    /// `1 - (q_b c~_b + (1 - q_b) c_b)`.
    pub mu0_closed_form: f64,
    /// Mass pushed beyond `x_max` or dropped with the cluster-size series.
    pub truncation_loss: f64,
    /// Mass carried by clusters that involve the input law's own lost mass.
    pub inherited_loss: f64,
}

impl StepOutput {
    /// `1 - Σ atoms - losses`, the zero mass implied by the convolution.
    pub fn mu0_from_convolution(&self) -> f64 {
        1.0 - self.law.c_b() - self.truncation_loss - self.inherited_loss
    }
}

/// Convolution of `a` (support starting at `a_lo`) with `b` (starting at
/// `b_lo`), keeping indices up to `x_max`. Returns the kept part, its start,
/// and the mass that fell beyond `x_max`.
fn truncated_convolution(
    a: &[f64],
    a_lo: i64,
    b: &[f64],
    b_lo: i64,
    x_max: i64,
) -> (Vec<f64>, i64, f64) {
    let lo = a_lo + b_lo;
    let full_hi = lo + (a.len() + b.len()) as i64 - 2;
    let total = compensated_sum(a.iter().copied()) * compensated_sum(b.iter().copied());
    if lo > x_max {
        return (Vec::new(), lo, total);
    }
    let hi = full_hi.min(x_max);
    let mut out = vec![0.0; (hi - lo + 1) as usize];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = CompensatedSum::new();
        let i_min = k.saturating_sub(b.len() - 1);
        let i_max = k.min(a.len() - 1);
        for i in i_min..=i_max {
            acc.add(a[i] * b[k - i]);
        }
        *slot = acc.value();
    }
    let kept = compensated_sum(out.iter().copied());
    (out, lo, (total - kept).max(0.0))
}

/// One step `μ_b -> μ_{b+1}`:
/// `μ_{b+1}(x) = q μ_b(x) 1{x >= b+1} + q Σ_{n>=1} (μ̂ * (ρ * μ̂)^{*n})(x)`
/// where `ρ` puts mass `Σ_{ℓ: floor(1.5 ln ℓ) = m} (1 - c)^{ℓ-1}` at
/// `2K - m` and `μ̂` is the positive part of `μ_b`. Every cluster size is
/// summed; mass landing beyond `x_max` is reported as truncation loss.
pub fn step_law(mu: &ChargeLaw, level: &FlowLevel, x_max: u64) -> Result<StepOutput> {
    let b = level.b;
    if mu.level() != b {
        return invalid(format!(
            "law is at level {} but step is at level {b}",
            mu.level()
        ));
    }
    if x_max < b + 1 {
        return invalid(format!(
            "x_max = {x_max} must be at least b + 1 = {}",
            b + 1
        ));
    }
    let c = mu.c_b();
    if !(c > 0.0) {
        return invalid("law has no positive atoms");
    }
    // geometric gaps see every positive charge, represented or not
    let c_gap = (c + mu.lost_mass()).min(1.0);
    let lambda = mu.lost_mass();
    let (q, one_minus_q) = level.block_end_probability(c_gap);
    let m_max = level.max_bucket();
    let k2 = 2 * level.k_b;
    let s_lo = k2 - m_max;
    let rho: Vec<f64> = (s_lo..=k2)
        .map(|s| level.bucket_geometric_mass(k2 - s, c_gap))
        .collect();
    let b_i = b as i64;
    if s_lo + b_i < 1 {
        return Err(Error::Inadmissible(format!(
            "clusters can reach intensity {} <= b; L is too large for K = {}",
            2 * b_i + s_lo,
            level.k_b
        )));
    }
    let x_max_i = x_max as i64;
    let atoms = mu.atoms();
    let (gap_then_charge, g_lo, _) = truncated_convolution(&rho, s_lo, atoms, b_i, x_max_i);

    let len = (x_max - b) as usize; // slots for x = b+1 ..= x_max
    let mut out = vec![CompensatedSum::new(); len];
    let mut beyond = CompensatedSum::new();
    for (x, a) in mu.positive_atoms().filter(|(x, _)| *x > b) {
        if x <= x_max {
            out[(x - b - 1) as usize].add(q * a);
        } else {
            beyond.add(q * a);
        }
    }

    // S = Σ_{n>=1} g^{*n} solves S = g + g * S; g lives on x >= 1, so the
    // recursion is causal and sums every cluster size reaching x_max
    let reach = x_max_i - b_i; // S is needed on 1..=reach
    let mut series = vec![0.0; (reach.max(0) + 1) as usize];
    for x in g_lo..=reach {
        let mut acc = CompensatedSum::new();
        if let Some(&v) = gap_then_charge.get((x - g_lo) as usize) {
            acc.add(v);
        }
        let y_max = (x - g_lo).min(g_lo + gap_then_charge.len() as i64 - 1);
        for y in g_lo..=y_max {
            acc.add(gap_then_charge[(y - g_lo) as usize] * series[(x - y) as usize]);
        }
        series[x as usize] = acc.value();
    }
    let mut kept = CompensatedSum::new();
    for x in (b_i + g_lo)..=x_max_i {
        let mut acc = CompensatedSum::new();
        for (i, &a) in atoms.iter().enumerate() {
            let rest = x - b_i - i as i64;
            if rest < g_lo {
                break;
            }
            acc.add(a * series[rest as usize]);
        }
        let v = q * acc.value();
        out[(x - b_i - 1) as usize].add(v);
        kept.add(v);
    }
    // untruncated cluster mass q c Σ_{n>=1} r^n with r = c (1 - q) / c_gap
    let one_minus_r = (lambda + c * q) / c_gap;
    let cluster_mass = if one_minus_r > 0.0 {
        q * c * (1.0 - one_minus_r) / one_minus_r
    } else {
        c
    };
    beyond.add((cluster_mass - kept.value()).max(0.0));

    let c_tilde = mu.c_tilde_b();
    let positive_true = q * (c_tilde + lambda) + one_minus_q * c_gap;
    let mu0 = 1.0 - positive_true;
    let positive_represented = q * c_tilde + cluster_mass;
    let inherited_loss = (positive_true - positive_represented).max(0.0);
    let truncation_loss = beyond.value();
    let mut new_atoms: Vec<f64> = out.iter().map(|s| s.value().max(0.0)).collect();
    while new_atoms.len() > 1 && new_atoms.last() == Some(&0.0) {
        new_atoms.pop();
    }
    // the atom total is exact up to rounding; losses absorb the remainder
    let lost = (1.0 - mu0 - compensated_sum(new_atoms.iter().copied())).max(0.0);
    let law = ChargeLaw::new(b + 1, mu0, new_atoms, lost)?;
    Ok(StepOutput {
        law,
        q_b: q,
        mu0_closed_form: mu0,
        truncation_loss,
        inherited_loss,
    })
}

/// `½ Σ_x |μ(x) - ν(x)|` over `{0}` and the positive atoms, with the lost
/// masses compared as one extra point.
pub fn total_variation(mu: &ChargeLaw, nu: &ChargeLaw) -> f64 {
    let lo = mu.level().min(nu.level()).max(1);
    let hi = mu.x_max().max(nu.x_max());
    let mut acc = CompensatedSum::new();
    acc.add((mu.mass0() - nu.mass0()).abs());
    acc.add((mu.lost_mass() - nu.lost_mass()).abs());
    for x in lo..=hi {
        acc.add((mu.mass(x) - nu.mass(x)).abs());
    }
    0.5 * acc.value()
}

/// `max_x μ(x) e^{(2/3) x + √x}` over the positive atoms; at most one when
/// `μ(x) <= e^{-(2/3) x - √x}` everywhere on the support.
pub fn domination_check(mu: &ChargeLaw) -> f64 {
    mu.positive_atoms()
        .filter(|(_, a)| *a > 0.0)
        .map(|(x, a)| a.ln() + (2.0 / 3.0) * x as f64 + (x as f64).sqrt())
        .fold(f64::NEG_INFINITY, f64::max)
        .exp()
}

/// `E_μ[ω_1] + (1 - μ(0)) ln(C / A)`.
pub fn rough_upper_bound(mu: &ChargeLaw, c_const: f64, a: f64) -> f64 {
    mu.mean() + (mu.c_b() + mu.lost_mass()) * (c_const / a).ln()
}

/// The same bound for any law dominated by `e^{-(2/3) x - √x}` on `x >= b`:
/// `Σ_{x>=b} x w(x) + ln(C / A) Σ_{x>=b} w(x)`.
pub fn dominated_rough_bound(b: u64, c_const: f64, a: f64) -> f64 {
    let w = |x: f64| (-(2.0 / 3.0) * x - x.sqrt()).exp();
    let mut first = CompensatedSum::new();
    let mut zeroth = CompensatedSum::new();
    let mut x = b as f64;
    loop {
        let wx = w(x);
        first.add(x * wx);
        zeroth.add(wx);
        if x * wx < 1e-18 * first.value() {
            break;
        }
        x += 1.0;
    }
    first.value() + (c_const / a).ln().max(0.0) * zeroth.value()
}

/// `𝒞_b` for `b = beta..=beta + levels`, with `K_b` from the level formula.
pub fn constant_flow(cal_c: f64, beta: u64, levels: usize, constants: &ProofConstants) -> Vec<f64> {
    let mut values = Vec::with_capacity(levels + 1);
    let mut c = cal_c;
    values.push(c);
    for i in 0..levels as u64 {
        let level = FlowLevel::from_constants(beta + i, cal_c, constants);
        c = lift_c(c, level.k_b, constants.big_b);
        values.push(c);
    }
    values
}

/// `B e^{1 - K_0} Σ_{a >= beta} a^{-2}` (upper enclosure of the tail); the
/// constant flow stays below `2𝒞` when this is at most `ln 2`.
pub fn constant_flow_smallness(beta: u64, constants: &ProofConstants) -> f64 {
    assert!(beta >= 1);
    const EXPLICIT: u64 = 100_000;
    let head = compensated_sum((beta..beta + EXPLICIT).map(|a| 1.0 / (a as f64 * a as f64)));
    let tail = 1.0 / (beta + EXPLICIT - 1) as f64;
    constants.big_b * (1.0 - constants.k0).exp() * (head + tail)
}

/// Smallest `beta` passing [`constant_flow_smallness`].
pub fn smallest_flow_beta(constants: &ProofConstants) -> u64 {
    (1..)
        .find(|&b| constant_flow_smallness(b, constants) <= std::f64::consts::LN_2)
        .unwrap()
}

/// One row of the flow history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub b: u64,
    pub q_b: f64,
    pub c_b: f64,
    pub ctilde_b: f64,
    pub mu0: f64,
    pub lost_mass: f64,
    #[serde(rename = "C_b")]
    pub c_const: f64,
    pub rough_bound: f64,
    pub domination_ratio: f64,
    pub mode: FlowMode,
}

/// How the level constants are chosen along a flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelPolicy {
    LevelFormulas,
    Fixed { k_b: i64, l_b: u64 },
}

impl LevelPolicy {
    pub fn level(&self, b: u64, cal_c: f64, constants: &ProofConstants) -> FlowLevel {
        match *self {
            LevelPolicy::LevelFormulas => FlowLevel::from_constants(b, cal_c, constants),
            LevelPolicy::Fixed { k_b, l_b } => FlowLevel::overridden(b, k_b, l_b),
        }
    }
}

/// Flow state after iterating: the current law and constant plus one record
/// per visited level.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub law: ChargeLaw,
    pub c_const: f64,
    pub b: u64,
    pub tol: f64,
    pub history: Vec<FlowRecord>,
    /// Set when the positive mass fell below [`EXHAUSTION_FLOOR`] before
    /// `b_max`; the history stops there.
    pub exhausted: bool,
}

impl FlowState {
    pub fn new(law: ChargeLaw, cal_c: f64, tol: f64) -> Self {
        Self {
            b: law.level(),
            law,
            c_const: cal_c,
            tol,
            history: Vec::new(),
            exhausted: false,
        }
    }

    /// Applies the constant map at the current level, records it and
    /// returns the new constant.
    pub fn step_constant(&mut self, level: &FlowLevel, big_b: f64) -> f64 {
        self.c_const = lift_c(self.c_const, level.k_b, big_b);
        self.c_const
    }

    fn record(&mut self, level: &FlowLevel, a: f64) {
        let c_gap = self.law.c_b() + self.law.lost_mass();
        let (q, _) = level.block_end_probability(c_gap);
        self.history.push(FlowRecord {
            b: self.b,
            q_b: q,
            c_b: self.law.c_b(),
            ctilde_b: self.law.c_tilde_b(),
            mu0: self.law.mass0(),
            lost_mass: self.law.lost_mass(),
            c_const: self.c_const,
            rough_bound: rough_upper_bound(&self.law, self.c_const, a),
            domination_ratio: domination_check(&self.law),
            mode: level.mode,
        });
    }

    /// CSV with columns `b,q_b,c_b,ctilde_b,mu0,lost_mass,C_b,rough_bound,domination_ratio,mode`.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "b,q_b,c_b,ctilde_b,mu0,lost_mass,C_b,rough_bound,domination_ratio,mode"
        )?;
        for r in &self.history {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.b,
                r.q_b,
                r.c_b,
                r.ctilde_b,
                r.mu0,
                r.lost_mass,
                r.c_const,
                r.rough_bound,
                r.domination_ratio,
                r.mode.as_str()
            )?;
        }
        Ok(())
    }
}

/// Default support cut: `20 (b + 2K) + span of the current support`.
pub fn default_x_max(law: &ChargeLaw, level: &FlowLevel) -> u64 {
    let span = law.x_max() - law.level();
    20 * (level.b + 2 * level.k_b.max(0) as u64) + span
}

/// Runs the law and constant maps from the start level up to `b_max`,
/// recording every level including the last.
pub fn iterate(
    mu_start: &ChargeLaw,
    cal_c: f64,
    b_max: u64,
    x_max: Option<u64>,
    tol: f64,
    policy: LevelPolicy,
    constants: &ProofConstants,
) -> Result<FlowState> {
    if b_max < mu_start.level() {
        return invalid(format!(
            "b_max = {b_max} below the start level {}",
            mu_start.level()
        ));
    }
    let mut state = FlowState::new(mu_start.clone(), cal_c, tol);
    loop {
        let level = policy.level(state.b, cal_c, constants);
        state.record(&level, constants.a);
        if state.b == b_max {
            break;
        }
        if state.law.c_b() < EXHAUSTION_FLOOR {
            state.exhausted = true;
            break;
        }
        let cut = x_max.unwrap_or_else(|| default_x_max(&state.law, &level));
        let step = step_law(&state.law, &level, cut)?;
        let limit = 100.0 * tol;
        if step.truncation_loss > limit {
            return Err(Error::TruncationOverflow {
                lost: step.truncation_loss,
                limit,
            });
        }
        state.law = step.law;
        state.step_constant(&level, constants.big_b);
        state.b += 1;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::compute_constants;
    use crate::environment::mu_beta;

    fn constants() -> ProofConstants {
        compute_constants(10_000)
    }

    #[test]
    fn single_cluster_contribution() {
        // only ℓ = 1 allowed: the smallest cluster is two charges b at distance 1
        let (b, k) = (5, 3);
        let mu = ChargeLaw::new(b, 0.7, vec![0.2, 0.1], 0.0).unwrap();
        let level = FlowLevel::overridden(b, k, 1);
        let out = step_law(&mu, &level, 200).unwrap();
        let x = 2 * b + 2 * k as u64;
        let q = 0.7f64; // (1 - c)^1
                        // two charges b,b with gap 1 is the only way to reach 2b + 2K
        assert!((out.law.mass(x) - q * 0.2 * 0.2).abs() < 1e-15);
        assert!((out.q_b - q).abs() < 1e-15);
        assert!((out.law.mass(b + 1) - q * 0.1).abs() < 1e-15);
        assert_eq!(out.law.mass(b), 0.0);
    }

    #[test]
    fn mass_identity_and_closed_form() {
        let (b, k, l) = (4, 3, 40);
        let mu = ChargeLaw::new(b, 0.96, vec![0.025, 0.01, 0.005], 0.0).unwrap();
        let out = step_law(&mu, &FlowLevel::overridden(b, k, l), 4000).unwrap();
        let law = &out.law;
        assert!((law.mass0() + law.c_b() + law.lost_mass() - 1.0).abs() < 1e-12);
        assert!((out.mu0_from_convolution() - out.mu0_closed_form).abs() < 1e-9);
        assert!(law.mass0() >= mu.mass0());
        assert!(out.truncation_loss < 1e-12);
        assert_eq!(law.level(), b + 1);
        for x in 1..=b {
            assert_eq!(law.mass(x), 0.0);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let mu = mu_beta(5.0, 0.7).unwrap();
        assert!(step_law(&mu, &FlowLevel::overridden(5, 3, 10), 5).is_err());
        assert!(step_law(&mu, &FlowLevel::overridden(4, 3, 10), 100).is_err());
        // L so large that two charges cluster to at most b
        assert!(matches!(
            step_law(&mu, &FlowLevel::overridden(5, 1, 1_000_000), 100),
            Err(Error::Inadmissible(_))
        ));
    }

    #[test]
    fn domination_of_two_point_law() {
        for &(beta, c) in &[(16.0, 0.95), (30.0, 0.9), (9.0, 0.7)] {
            let mu = mu_beta(beta, c).unwrap();
            let expected = (-(c - 2.0 / 3.0) * beta + beta.sqrt()).exp();
            assert!((domination_check(&mu) / expected - 1.0).abs() < 1e-12);
            let threshold = 1.0 / (c - 2.0 / 3.0f64).powi(2);
            assert_eq!(domination_check(&mu) <= 1.0, beta >= threshold);
        }
        let empty = ChargeLaw::new(3, 1.0, vec![0.0], 0.0).unwrap();
        assert_eq!(domination_check(&empty), 0.0);
    }

    #[test]
    fn rough_bound_of_two_point_law() {
        let consts = constants();
        let (beta, c, cal_c) = (6.0, 0.8, 1.6);
        let mu = mu_beta(beta, c).unwrap();
        let expected = (-c * beta).exp() * (beta + (cal_c / consts.a).ln());
        assert!((rough_upper_bound(&mu, cal_c, consts.a) - expected).abs() < 1e-15);
        assert!(
            dominated_rough_bound(200, 3.2, consts.a) < dominated_rough_bound(100, 3.2, consts.a)
        );
    }

    #[test]
    fn constant_flow_recursion_and_ceiling() {
        let consts = constants();
        let cal_c = 1.6;
        let beta = smallest_flow_beta(&consts);
        assert!(constant_flow_smallness(beta, &consts) <= std::f64::consts::LN_2);
        assert!(beta == 1 || constant_flow_smallness(beta - 1, &consts) > std::f64::consts::LN_2);
        let flow = constant_flow(cal_c, beta, 50, &consts);
        let k = FlowLevel::from_constants(beta, cal_c, &consts).k_b;
        assert_eq!(
            flow[1],
            (1.0 + consts.big_b * (-(k as f64)).exp() * cal_c) * cal_c
        );
        assert!(flow.windows(2).all(|w| w[1] > w[0]));
        assert!(flow.iter().all(|&c| c <= 2.0 * cal_c));
    }

    #[test]
    fn three_level_overridden_run() {
        let consts = constants();
        let mu = ChargeLaw::new(5, 0.97, vec![0.02, 0.01], 0.0).unwrap();
        let state = iterate(
            &mu,
            1.6,
            8,
            Some(3000),
            1e-12,
            LevelPolicy::Fixed { k_b: 3, l_b: 20 },
            &consts,
        )
        .unwrap();
        assert_eq!(state.history.len(), 4);
        assert_eq!(state.b, 8);
        assert!(!state.exhausted);
        for w in state.history.windows(2) {
            assert!(w[1].mu0 >= w[0].mu0);
            assert!(w[1].c_const > w[0].c_const);
            assert_eq!(w[1].b, w[0].b + 1);
        }
        assert!(state.history.iter().all(|r| r.mode == FlowMode::Overridden));
        let mut buf = Vec::new();
        state.write_history_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(
            text.starts_with("b,q_b,c_b,ctilde_b,mu0,lost_mass,C_b,rough_bound,domination_ratio")
        );
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn tight_support_cut_is_reported() {
        let consts = constants();
        let mu = ChargeLaw::new(5, 0.9, vec![0.06, 0.04], 0.0).unwrap();
        let err = iterate(
            &mu,
            1.6,
            7,
            Some(20),
            1e-12,
            LevelPolicy::Fixed { k_b: 3, l_b: 20 },
            &consts,
        );
        assert!(matches!(err, Err(Error::TruncationOverflow { .. })));
    }

    #[test]
    fn formula_levels_handle_huge_lengths() {
        let consts = constants();
        let level = FlowLevel::from_constants(120, 1.6, &consts);
        assert!(level.l_exact.is_none());
        let mu = mu_beta(120.0, 0.8).unwrap();
        let out = step_law(&mu, &level, default_x_max(&mu, &level)).unwrap();
        assert!(out.q_b > 0.0 && out.q_b < 1.0);
        assert!((out.mu0_from_convolution() - out.mu0_closed_form).abs() < 1e-9);
    }
}
