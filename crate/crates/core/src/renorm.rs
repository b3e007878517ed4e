//! Block renormalization of charge environments at level `b`.
//!
//! Charges closer than `L_b` are grouped into blocks. Singletons of minimal
//! intensity `b` are erased, every other block becomes one charge of
//! intensity `Φ(block)`, and gaps between surviving blocks shrink by `L_b`
//! per crossed block boundary.

use crate::bounds::ProofConstants;
use crate::environment::Environment;
use crate::error::{invalid, Error, Result};
use crate::logweight::LogWeight;
use crate::numeric::log_bucket;
use crate::partition::charge_partition;
use serde::Serialize;

/// `L_b` must stay below this so gap arithmetic never overflows.
const L_LIMIT: f64 = 4.611_686_018_427_388e18; // 2^62

/// Level-`b` constants and the admissibility predicates that the block
/// bound relies on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RenormParams {
    pub b: u64,
    pub k_b: i64,
    pub l_b: u64,
    /// Constant `C` of the partition function being renormalized.
    pub c: f64,
    /// Renewal-function constant `𝒞` the level constants are built from.
    pub cal_c: f64,
    pub k0: f64,
    pub big_b: f64,
    /// `true` when `k_b, l_b` come from the level formulas.
    pub from_defaults: bool,
}

impl RenormParams {
    /// `K_b >= 2 ln 2`.
    pub fn subset_count_ok(&self) -> bool {
        self.k_b as f64 >= 2.0 * std::f64::consts::LN_2
    }

    /// `K_b >= ln(2 𝒞)`.
    pub fn constant_ok(&self) -> bool {
        self.k_b as f64 >= (2.0 * self.cal_c).ln()
    }

    /// `K_b >= K_0 + ln C`.
    pub fn removal_ok(&self) -> bool {
        self.k_b as f64 >= self.k0 + self.c.ln()
    }

    pub fn admissible(&self) -> bool {
        self.subset_count_ok() && self.constant_ok() && self.removal_ok()
    }

    /// Same level with a different constant `C`.
    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    /// Parameters with explicitly chosen `K` and `L` (not from the level
    /// formulas), used to exercise the pipeline at small sizes.
    pub fn overridden(b: u64, k_b: i64, l_b: u64, c: f64, constants: &ProofConstants) -> Self {
        Self {
            b,
            k_b,
            l_b,
            c,
            cal_c: c,
            k0: constants.k0,
            big_b: constants.big_b,
            from_defaults: false,
        }
    }
}

/// `K_b = floor(K_0 + ln⁺(2𝒞) + 2 ln b)`, `L_b = floor(e^{(2/3)(b + K_b)})`,
/// with `C = 𝒞`.
pub fn renorm_constants(b: u64, cal_c: f64, constants: &ProofConstants) -> Result<RenormParams> {
    if b < 1 {
        return invalid("level must be at least 1");
    }
    if !(cal_c > 0.0) {
        return invalid(format!("renewal constant must be positive, got {cal_c}"));
    }
    let k0 = constants.k0;
    if !(k0 > 0.0) {
        return invalid(format!("K_0 must be positive, got {k0}"));
    }
    let log_plus = (2.0 * cal_c).ln().max(0.0);
    let k_b = (k0 + log_plus + 2.0 * (b as f64).ln()).floor() as i64;
    let l_b = level_length(b, k_b)?;
    Ok(RenormParams {
        b,
        k_b,
        l_b,
        c: cal_c,
        cal_c,
        k0,
        big_b: constants.big_b,
        from_defaults: true,
    })
}

/// `floor(e^{(2/3)(b + k)})`.
pub fn level_length(b: u64, k: i64) -> Result<u64> {
    let l = ((2.0 / 3.0) * (b as f64 + k as f64)).exp().floor();
    if !(l < L_LIMIT) {
        return Err(Error::Overflow(format!(
            "L = e^(2/3 ({b} + {k})) exceeds 2^62"
        )));
    }
    Ok((l as u64).max(1))
}

/// `T_b(C) = (1 + B e^{-K_b} C) C`.
pub fn lift_c(c: f64, k_b: i64, big_b: f64) -> f64 {
    (1.0 + big_b * (-(k_b as f64)).exp() * c) * c
}

/// Clustered intensity `Σ η_i - Σ floor(1.5 ln Δ_i) + 2 (n - 1) K_b` of a
/// block with intensities `etas` and the `etas.len() - 1` gaps between them.
pub fn phi(etas: &[u64], internal_gaps: &[u64], k_b: i64) -> i64 {
    debug_assert_eq!(internal_gaps.len() + 1, etas.len());
    let eta_sum: i64 = etas.iter().map(|&e| e as i64).sum();
    let log_sum: i64 = internal_gaps.iter().map(|&g| log_bucket(g)).sum();
    eta_sum - log_sum + 2 * internal_gaps.len() as i64 * k_b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockKind {
    /// Single charge of intensity exactly `b`.
    Good,
    /// Single charge of intensity at least `b + 1`.
    IsolatedHeavy,
    /// Two or more charges with internal gaps at most `L_b`.
    Bad,
}

/// Charges `sigma..=tau` (1-based charge indices) forming one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Block {
    pub sigma: usize,
    pub tau: usize,
    pub kind: BlockKind,
    pub phi: i64,
}

impl Block {
    pub fn len(&self) -> usize {
        self.tau - self.sigma + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Decomposition of an environment into blocks `Y_0, Y_1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDecomposition {
    /// Last charge of `Y_0`, the block attached to the origin (0 when the
    /// first gap exceeds `L_b`).
    pub tau0: usize,
    /// `Φ(Y_0)` counting the origin as a zero charge; 0 when `tau0 = 0`.
    pub eta_hat_0: i64,
    /// `Y_1, Y_2, ...`; `blocks[k - 1]` is `Y_k`.
    pub blocks: Vec<Block>,
    /// `S_1, S_2, ...`: indices `k >= 1` of the blocks that are not good.
    pub surviving: Vec<usize>,
}

impl BlockDecomposition {
    /// `σ_k` (with `σ_0 = 0`).
    pub fn sigma(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.blocks[k - 1].sigma
        }
    }

    /// `τ_k` (with `τ_0 = tau0`).
    pub fn tau(&self, k: usize) -> usize {
        if k == 0 {
            self.tau0
        } else {
            self.blocks[k - 1].tau
        }
    }

    pub fn block(&self, k: usize) -> &Block {
        &self.blocks[k - 1]
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind == kind).count()
    }
}

/// Splits `env` into blocks: `τ_n = inf{k >= σ_n : Δ_{k+1} > L_b}`,
/// `σ_{n+1} = τ_n + 1`, treating the gap after the last charge as infinite.
pub fn decompose(env: &Environment, params: &RenormParams) -> Result<BlockDecomposition> {
    let b = params.b;
    if let Some(k) = env.etas().iter().position(|&e| e < b) {
        return invalid(format!(
            "charge {} has intensity {} below level {b}",
            k + 1,
            env.etas()[k]
        ));
    }
    let gaps = env.gaps();
    let etas = env.etas();
    let n = env.len();
    let l = params.l_b;
    // charge k (1-based) has gap gaps[k-1] and intensity etas[k-1]
    let run_end = |start: usize| {
        let mut k = start;
        while k < n && gaps[k] <= l {
            k += 1;
        }
        k
    };
    let tau0 = run_end(0);
    let eta_hat_0 = if tau0 == 0 {
        0
    } else {
        phi(&[&[0], &etas[..tau0]].concat(), &gaps[..tau0], params.k_b)
    };
    let mut blocks = Vec::new();
    let mut surviving = Vec::new();
    let mut sigma = tau0 + 1;
    while sigma <= n {
        let tau = run_end(sigma);
        let block_etas = &etas[sigma - 1..tau];
        let kind = match block_etas {
            [e] if *e == b => BlockKind::Good,
            [_] => BlockKind::IsolatedHeavy,
            _ => BlockKind::Bad,
        };
        let value = phi(block_etas, &gaps[sigma..tau], params.k_b);
        blocks.push(Block {
            sigma,
            tau,
            kind,
            phi: value,
        });
        if kind != BlockKind::Good {
            surviving.push(blocks.len());
        }
        sigma = tau + 1;
    }
    Ok(BlockDecomposition {
        tau0,
        eta_hat_0,
        blocks,
        surviving,
    })
}

/// Renormalized environment `T_b ω` (at level `b + 1`) and `η̂_0`.
pub fn apply_t(env: &Environment, params: &RenormParams) -> Result<(Environment, i64)> {
    let dec = decompose(env, params)?;
    Ok((renormalized_environment(env, params, &dec)?, dec.eta_hat_0))
}

/// `η'_k = Φ(Y_{S_k})`, `Δ'_k = Σ_{j = S_{k-1}+1}^{S_k} (Δ_{σ_j} - L_b)`.
pub fn renormalized_environment(
    env: &Environment,
    params: &RenormParams,
    dec: &BlockDecomposition,
) -> Result<Environment> {
    if dec.surviving.is_empty() {
        return Err(Error::EmptyRenormalization);
    }
    let mut gaps = Vec::with_capacity(dec.surviving.len());
    let mut etas = Vec::with_capacity(dec.surviving.len());
    let mut prev = 0;
    for &s in &dec.surviving {
        let gap: u64 = (prev + 1..=s)
            .map(|j| env.gaps()[dec.sigma(j) - 1] - params.l_b)
            .sum();
        let block = dec.block(s);
        if block.phi <= params.b as i64 {
            return Err(Error::Inadmissible(format!(
                "block {s} clusters to intensity {} <= b = {}; L is too large for K",
                block.phi, params.b
            )));
        }
        gaps.push(gap);
        etas.push(block.phi as u64);
        prev = s;
    }
    Environment::with_level(params.b + 1, gaps, etas)
}

/// Both sides of `𝒵_{n(ω,N)}(ω, C) <= e^{η̂_0} 𝒵_N(T_b ω, T_b C)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZboundCheck {
    pub lhs: LogWeight,
    pub rhs: LogWeight,
    /// `n(ω, N) = τ_{S_N}`.
    pub n_of_omega: usize,
    pub holds: bool,
    /// `N <= n(ω, N)` and `t_N(T_b ω) <= t_{n(ω,N)}(ω)`.
    pub bookkeeping_ok: bool,
}

/// Evaluates both sides of the block bound for the first `n_surviving`
/// renormalized charges.
pub fn verify_zbound(
    env: &Environment,
    params: &RenormParams,
    n_surviving: usize,
) -> Result<ZboundCheck> {
    if !params.admissible() {
        return Err(Error::Inadmissible(format!(
            "K_b = {} fails an admissibility predicate for C = {}",
            params.k_b, params.c
        )));
    }
    if !(params.c > 0.0 && params.c <= 2.0 * params.cal_c) {
        return Err(Error::Inadmissible(format!(
            "C = {} outside (0, 2𝒞]",
            params.c
        )));
    }
    let dec = decompose(env, params)?;
    if n_surviving == 0 || n_surviving > dec.surviving.len() {
        return invalid(format!(
            "{n_surviving} surviving charges requested, {} available",
            dec.surviving.len()
        ));
    }
    let renormalized = renormalized_environment(env, params, &dec)?;
    let n_of_omega = dec.tau(dec.surviving[n_surviving - 1]);
    let lhs = charge_partition(env, n_of_omega, params.c)?;
    let lifted = lift_c(params.c, params.k_b, params.big_b);
    let rhs = LogWeight::from_ln(dec.eta_hat_0 as f64)
        * charge_partition(&renormalized, n_surviving, lifted)?;
    let slack = 1e-12 * rhs.ln().abs().max(1.0);
    Ok(ZboundCheck {
        lhs,
        rhs,
        n_of_omega,
        holds: lhs.ln() <= rhs.ln() + slack,
        bookkeeping_ok: n_surviving <= n_of_omega
            && renormalized.t(n_surviving) <= env.t(n_of_omega),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::compute_constants;
    use crate::environment::{sample_environment, ChargeLaw};
    use proptest::prelude::*;

    fn constants() -> ProofConstants {
        compute_constants(10_000)
    }

    fn params(b: u64, k: i64, l: u64) -> RenormParams {
        RenormParams::overridden(b, k, l, 1.0, &constants())
    }

    #[test]
    fn level_constants_examples() {
        let consts = ProofConstants {
            k0: 3.0,
            ..constants()
        };
        let p = renorm_constants(1, 0.25, &consts).unwrap();
        assert_eq!(p.k_b, 3);
        assert_eq!(level_length(5, 7).unwrap(), 2980);
        let mut prev = i64::MIN;
        for b in 1..50 {
            let p = renorm_constants(b, 1.6, &constants()).unwrap();
            assert!(p.k_b >= prev);
            assert_eq!(
                p.l_b,
                ((2.0 / 3.0) * (b as f64 + p.k_b as f64)).exp().floor() as u64
            );
            prev = p.k_b;
        }
        assert!(matches!(
            renorm_constants(80, 1.6, &constants()),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(&[7], &[], 4), 7);
        let (b, k) = (5, 4);
        assert_eq!(phi(&[b, b], &[1], k), 2 * b as i64 + 2 * k);
        assert_eq!(phi(&[b, b + 1], &[2], k), 2 * b as i64 + 2 * k);
    }

    #[test]
    fn lift_examples() {
        assert_eq!(lift_c(1.0, 0, 1.0), 2.0);
        assert!((lift_c(1.3, 800, 20.0) - 1.3).abs() < 1e-300);
        assert!(lift_c(1.0, 3, 20.0) < lift_c(1.1, 3, 20.0));
    }

    /// Environment drawn in the block figure: 11 charges, the block of
    /// charge 8 is a good singleton.
    fn figure_env(b: u64, l: u64) -> Environment {
        let far = l + 5;
        let gaps = vec![far, 2, 3, 1, far + 1, 4, 2, far + 2, far + 3, 1, 1];
        let etas = vec![b + 2, b, b, b + 1, b, b, b, b, b + 1, b, b];
        Environment::with_level(b, gaps, etas).unwrap()
    }

    #[test]
    fn figure_configuration() {
        let (b, l) = (5, 10);
        let p = params(b, 4, l);
        let env = figure_env(b, l);
        let dec = decompose(&env, &p).unwrap();
        let bounds: Vec<(usize, usize)> = (0..=4).map(|k| (dec.sigma(k), dec.tau(k))).collect();
        assert_eq!(bounds, vec![(0, 0), (1, 4), (5, 7), (8, 8), (9, 11)]);
        assert_eq!(dec.eta_hat_0, 0);
        assert_eq!(dec.block(3).kind, BlockKind::Good);
        assert_eq!(dec.surviving, vec![1, 2, 4]);
        let (renormalized, _) = apply_t(&env, &p).unwrap();
        let gaps = env.gaps();
        assert_eq!(
            renormalized.gaps(),
            &[gaps[0] - l, gaps[4] - l, (gaps[7] - l) + (gaps[8] - l)]
        );
        assert_eq!(
            renormalized.etas()[0] as i64,
            phi(&env.etas()[0..4], &gaps[1..4], 4)
        );
        assert_eq!(renormalized.level(), b + 1);
    }

    #[test]
    fn origin_block_is_clustered() {
        let p = params(3, 2, 10);
        let env = Environment::with_level(3, vec![2, 3, 40], vec![3, 4, 5]).unwrap();
        let dec = decompose(&env, &p).unwrap();
        assert_eq!(dec.tau0, 2);
        // origin + charges 1, 2: 0 + 3 + 4 - floor(1.5 ln 2) - floor(1.5 ln 3) + 2 * 2 * 2
        assert_eq!(dec.eta_hat_0, 7 - 1 - 1 + 8);
        assert_eq!(dec.surviving, vec![1]);
    }

    #[test]
    fn degenerate_layouts() {
        let p = params(4, 3, 10);
        let sparse = Environment::with_level(4, vec![11, 20, 15], vec![5, 6, 9]).unwrap();
        let dec = decompose(&sparse, &p).unwrap();
        assert!(dec
            .blocks
            .iter()
            .enumerate()
            .all(|(i, b)| b.sigma == i + 1 && b.tau == i + 1));
        let (renormalized, eta0) = apply_t(&sparse, &p).unwrap();
        assert_eq!(eta0, 0);
        assert_eq!(renormalized.etas(), sparse.etas());
        assert_eq!(renormalized.gaps(), &[1, 10, 5]);

        let dense = Environment::with_level(4, vec![11, 2, 3, 1], vec![4, 4, 5, 4]).unwrap();
        let dec = decompose(&dense, &p).unwrap();
        assert_eq!(dec.blocks.len(), 1);
        assert_eq!(dec.block(1).kind, BlockKind::Bad);

        let good = Environment::with_level(4, vec![11, 12], vec![4, 4]).unwrap();
        assert!(matches!(
            apply_t(&good, &p),
            Err(Error::EmptyRenormalization)
        ));
    }

    /// Reference decomposition: cut the charge list at every gap above `L`.
    fn reference_blocks(env: &Environment, l: u64) -> Vec<(usize, usize)> {
        let mut cuts = vec![0];
        cuts.extend(
            (1..=env.len())
                .filter(|&k| env.gaps()[k - 1] > l)
                .map(|k| k - 1),
        );
        cuts.push(env.len());
        cuts.dedup();
        // ranges (cut_i, cut_{i+1}] shifted to charge indices
        let mut out: Vec<(usize, usize)> = Vec::new();
        let firsts: Vec<usize> = (1..=env.len()).filter(|&k| env.gaps()[k - 1] > l).collect();
        let tau0 = firsts.first().map_or(env.len(), |&f| f - 1);
        out.push((0, tau0));
        for (i, &start) in firsts.iter().enumerate() {
            let end = firsts.get(i + 1).map_or(env.len(), |&f| f - 1);
            out.push((start, end));
        }
        out
    }

    proptest! {
        #[test]
        fn decomposition_invariants(
            gaps in prop::collection::vec(1u64..40, 1..60),
            extra in prop::collection::vec(0u64..3, 60),
            l in 1u64..30,
        ) {
            let b = 3;
            let etas: Vec<u64> = gaps.iter().zip(&extra).map(|(_, e)| b + e).collect();
            let env = Environment::with_level(b, gaps.clone(), etas.clone()).unwrap();
            let p = params(b, 6, l);
            let dec = decompose(&env, &p).unwrap();
            let got: Vec<(usize, usize)> = (0..=dec.blocks.len()).map(|k| (dec.sigma(k), dec.tau(k))).collect();
            prop_assert_eq!(got, reference_blocks(&env, l));
            // every charge in exactly one block, inter-block gaps above L
            let mut next = dec.tau0 + 1;
            for block in &dec.blocks {
                prop_assert_eq!(block.sigma, next);
                prop_assert!(gaps[block.sigma - 1] > l);
                prop_assert!(gaps[block.sigma..block.tau].iter().all(|&g| g <= l));
                let kind = match block.len() {
                    1 if etas[block.sigma - 1] == b => BlockKind::Good,
                    1 => BlockKind::IsolatedHeavy,
                    _ => BlockKind::Bad,
                };
                prop_assert_eq!(block.kind, kind);
                next = block.tau + 1;
            }
            prop_assert_eq!(next, env.len() + 1);
            let expect: Vec<usize> = dec.blocks.iter().enumerate()
                .filter(|(_, b)| b.kind != BlockKind::Good).map(|(i, _)| i + 1).collect();
            prop_assert_eq!(&dec.surviving, &expect);
            if let Ok((renormalized, _)) = apply_t(&env, &p) {
                prop_assert_eq!(renormalized.len(), dec.surviving.len());
            }
        }
    }

    #[test]
    fn renormalized_charges_exceed_level() {
        let consts = constants();
        let p = renorm_constants(2, 1.6, &consts).unwrap();
        let c = 2.0 / p.l_b as f64;
        let law = ChargeLaw::new(2, 1.0 - c, vec![0.7 * c, 0.2 * c, 0.1 * c], 0.0).unwrap();
        for seed in 0..1000 {
            let env = sample_environment(&law, 40, seed).unwrap();
            match apply_t(&env, &p) {
                Ok((renormalized, _)) => assert!(renormalized.etas().iter().all(|&e| e > p.b)),
                Err(Error::EmptyRenormalization) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn zbound_single_heavy_charge() {
        let consts = constants();
        let p = renorm_constants(2, 1.6, &consts).unwrap();
        assert!(p.admissible());
        let env = Environment::with_level(2, vec![p.l_b + 7], vec![5]).unwrap();
        let check = verify_zbound(&env, &p, 1).unwrap();
        let t1 = (p.l_b + 7) as f64;
        assert!((check.lhs.ln() - (5.0 + p.c.ln() - 1.5 * t1.ln())).abs() < 1e-12);
        let lifted = lift_c(p.c, p.k_b, p.big_b);
        assert!((check.rhs.ln() - (5.0 + lifted.ln() - 1.5 * 7f64.ln())).abs() < 1e-12);
        assert!(check.holds && check.bookkeeping_ok);
    }

    #[test]
    fn zbound_rejects_inadmissible_parameters() {
        let consts = constants();
        let p = renorm_constants(2, 1.6, &consts).unwrap();
        let env = Environment::with_level(2, vec![p.l_b + 7], vec![5]).unwrap();
        assert!(matches!(
            verify_zbound(&env, &p.with_c(100.0), 1),
            Err(Error::Inadmissible(_))
        ));
        let weak = RenormParams { k_b: 0, ..p };
        assert!(matches!(
            verify_zbound(&env, &weak, 1),
            Err(Error::Inadmissible(_))
        ));
    }

    #[test]
    fn zbound_reduces_to_monotonicity_without_clustering() {
        // all charges heavy and isolated with gaps exactly L + 1: T_b ω has
        // unit gaps, identical intensities and η̂_0 = 0
        let consts = constants();
        let p = renorm_constants(2, 1.6, &consts).unwrap();
        let env = Environment::with_level(2, vec![p.l_b + 1; 6], vec![3, 4, 3, 5, 3, 3]).unwrap();
        let check = verify_zbound(&env, &p, 6).unwrap();
        assert!(check.holds);
    }
}
