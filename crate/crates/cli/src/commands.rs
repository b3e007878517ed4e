//! Subcommand parameters (shared by flags and config files) and their
//! execution. Each command writes fixed file names under the output
//! directory and returns a one-line summary.

use crate::error::{CliError, CliResult};
use crate::law::LawArgs;
use crate::report::{emit_report, write_json, Format};
use crate::scan::{scan_critical, ScanSizes, MAX_DEPTH};
use clap::{Args, Subcommand};
use pinlab::bounds::{
    a_mb_sweep, b_nb, compute_constants, conv_power_bound, gamma_predicate, theta_plus_sweep, xi,
    BoundCheck, ProofConstants,
};
use pinlab::environment::{replica_rng, sample_environment, Environment};
use pinlab::flow::{iterate, FlowLevel, LevelPolicy};
use pinlab::partition::{charge_partition, exact_partition, free_energy_estimate};
use pinlab::renewal::{renewal_function, srw_first_return_law, DEFAULT_HORIZON};
use pinlab::renorm::{
    decompose, renorm_constants, renormalized_environment, verify_zbound, BlockKind, RenormParams,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

/// Exact partition functions are only computed up to this many sites.
pub const EXACT_SPAN_LIMIT: u64 = 20_000;

/// Settings common to every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sample a charge environment and write it in run-length form.
    GenEnv(GenEnvParams),
    /// Charge-indexed (and, for short environments, exact) partition function.
    Partition(PartitionParams),
    /// Replica estimate of the free energy.
    FreeEnergy(FreeEnergyParams),
    /// Apply one level of the environment renormalization.
    Renormalize(RenormalizeParams),
    /// Iterate the charge-law and constant flow.
    IterateMeasure(IterateParams),
    /// Run the lemma checks and write a report.
    VerifyBounds(VerifyParams),
    /// Bisect the localization threshold for each intensity.
    ScanCritical(ScanParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenEnv(_) => "gen-env",
            Command::Partition(_) => "partition",
            Command::FreeEnergy(_) => "free-energy",
            Command::Renormalize(_) => "renormalize",
            Command::IterateMeasure(_) => "iterate-measure",
            Command::VerifyBounds(_) => "verify-bounds",
            Command::ScanCritical(_) => "scan-critical",
        }
    }

    pub fn run(&self, ctx: &Context) -> CliResult<String> {
        std::fs::create_dir_all(&ctx.out)?;
        match self {
            Command::GenEnv(p) => gen_env(p, ctx),
            Command::Partition(p) => partition(p, ctx),
            Command::FreeEnergy(p) => free_energy(p, ctx),
            Command::Renormalize(p) => renormalize(p, ctx),
            Command::IterateMeasure(p) => iterate_measure(p, ctx),
            Command::VerifyBounds(p) => verify_bounds(p, ctx),
            Command::ScanCritical(p) => scan(p, ctx),
        }
    }
}

fn default_tol() -> f64 {
    1e-12
}
fn default_replicas() -> usize {
    32
}
fn default_depth() -> usize {
    12
}
fn default_format() -> Format {
    Format::Csv
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenEnvParams {
    #[command(flatten)]
    #[serde(default)]
    pub law: LawArgs,
    #[arg(long)]
    pub n_charges: usize,
}

/// An environment read from `env` or sampled from `law`.
fn load_env(
    env: &Option<PathBuf>,
    law: &LawArgs,
    n_charges: Option<usize>,
    seed: u64,
) -> CliResult<Environment> {
    if let Some(path) = env {
        return Ok(Environment::read(BufReader::new(File::open(path)?))?);
    }
    if !law.is_given() {
        return Err(CliError::Config("give either `env` or a law".into()));
    }
    let n = n_charges.ok_or_else(|| CliError::Config("sampling needs `n_charges`".into()))?;
    Ok(sample_environment(&law.build()?, n, seed)?)
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionParams {
    /// Environment file; takes precedence over a law.
    #[arg(long)]
    #[serde(default)]
    pub env: Option<PathBuf>,
    #[command(flatten)]
    #[serde(default)]
    pub law: LawArgs,
    #[arg(long)]
    #[serde(default)]
    pub n_charges: Option<usize>,
    /// Constant `C`; defaults to the renewal-function constant.
    #[arg(long)]
    #[serde(default)]
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeEnergyParams {
    #[command(flatten)]
    #[serde(default)]
    pub law: LawArgs,
    #[arg(long)]
    pub n_charges: usize,
    #[arg(long, default_value_t = default_replicas())]
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[arg(long)]
    #[serde(default)]
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenormalizeParams {
    /// Environment file; takes precedence over a law.
    #[arg(long)]
    #[serde(default)]
    pub env: Option<PathBuf>,
    #[command(flatten)]
    #[serde(default)]
    pub law: LawArgs,
    #[arg(long)]
    #[serde(default)]
    pub n_charges: Option<usize>,
    /// Level; defaults to the environment's level.
    #[arg(long)]
    #[serde(default)]
    pub b: Option<u64>,
    /// Override of `K_b` (needs `l` too).
    #[arg(long)]
    #[serde(default)]
    pub k: Option<i64>,
    /// Override of `L_b` (needs `k` too).
    #[arg(long)]
    #[serde(default)]
    pub l: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub constant: Option<f64>,
    /// Also check the block bound over all surviving charges.
    #[arg(long)]
    #[serde(default)]
    pub zbound: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateParams {
    #[command(flatten)]
    #[serde(default)]
    pub law: LawArgs,
    #[arg(long)]
    pub b_max: u64,
    #[arg(long)]
    #[serde(default)]
    pub x_max: Option<u64>,
    #[arg(long, default_value_t = default_tol())]
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Fixed `K` at every level (needs `l` too).
    #[arg(long)]
    #[serde(default)]
    pub k: Option<i64>,
    /// Fixed `L` at every level (needs `k` too).
    #[arg(long)]
    #[serde(default)]
    pub l: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyParams {
    /// Largest `N` for the renewal-sum check.
    #[arg(long, default_value_t = 1000)]
    pub theta_n: usize,
    #[arg(long, default_value_t = 32)]
    pub conv_k: usize,
    #[arg(long, default_value_t = 1024)]
    pub conv_n: usize,
    /// Random point sets for the removal check.
    #[arg(long, default_value_t = 20)]
    pub xi_sets: usize,
    /// Levels for the clustered composition bound.
    #[arg(long, value_delimiter = ',', default_values_t = [10_000u64])]
    pub bnb_levels: Vec<u64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            theta_n: 1000,
            conv_k: 32,
            conv_n: 1024,
            xi_sets: 20,
            bnb_levels: vec![10_000],
            format: Format::Json,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanParams {
    #[arg(long, value_delimiter = ',', required = true)]
    pub betas: Vec<u64>,
    #[arg(long)]
    pub n_charges: usize,
    #[arg(long, default_value_t = default_replicas())]
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[arg(long, default_value_t = default_depth())]
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[arg(long)]
    #[serde(default)]
    pub constant: Option<f64>,
    #[arg(long, value_enum, default_value_t = default_format())]
    #[serde(default = "default_format")]
    pub format: Format,
}

/// The renewal-function constant of the simple random walk.
pub fn renewal_constant() -> CliResult<f64> {
    Ok(renewal_function(&srw_first_return_law(DEFAULT_HORIZON)?).cal_c())
}

fn constant_or_default(c: Option<f64>) -> CliResult<f64> {
    match c {
        Some(c) if c > 0.0 && c.is_finite() => Ok(c),
        Some(c) => Err(CliError::Config(format!(
            "constant must be positive and finite, got {c}"
        ))),
        None => renewal_constant(),
    }
}

fn write_env(env: &Environment, path: &Path) -> CliResult<()> {
    env.write(BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn gen_env(p: &GenEnvParams, ctx: &Context) -> CliResult<String> {
    let env = sample_environment(&p.law.build()?, p.n_charges, ctx.seed)?;
    write_env(&env, &ctx.path("environment.txt"))?;
    Ok(format!(
        "{} charges at level {}, last charge at {}",
        env.len(),
        env.level(),
        env.span()
    ))
}

#[derive(Debug, Serialize)]
struct PartitionRecord {
    n_charges: usize,
    span: u64,
    constant: f64,
    ln_charge_partition: f64,
    /// Exact pinning partition function up to the last charge, for short
    /// environments whose last charge the walk can reach (even sites).
    ln_exact_partition: Option<f64>,
}

fn partition(p: &PartitionParams, ctx: &Context) -> CliResult<String> {
    let env = load_env(&p.env, &p.law, p.n_charges, ctx.seed)?;
    let c = constant_or_default(p.constant)?;
    let ln_charge = charge_partition(&env, env.len(), c)?.ln();
    let ln_exact = if env.span() <= EXACT_SPAN_LIMIT && env.span() % 2 == 0 {
        let horizon = (env.span() as usize + 1).max(2) & !1;
        let k = srw_first_return_law(horizon)?;
        Some(exact_partition(&env.to_sites(env.span())?, &k)?.ln())
    } else {
        None
    };
    let record = PartitionRecord {
        n_charges: env.len(),
        span: env.span(),
        constant: c,
        ln_charge_partition: ln_charge,
        ln_exact_partition: ln_exact,
    };
    write_json(&record, &ctx.path("partition.json"))?;
    Ok(format!("ln Z = {ln_charge:.10} over {} charges", env.len()))
}

fn free_energy(p: &FreeEnergyParams, ctx: &Context) -> CliResult<String> {
    let c = constant_or_default(p.constant)?;
    let est = free_energy_estimate(&p.law.build()?, c, p.n_charges, p.replicas, ctx.seed)?;
    write_json(&est, &ctx.path("free_energy.json"))?;
    Ok(format!(
        "F = {:.6e} ± {:.2e}",
        est.value,
        est.stderr.unwrap_or(f64::NAN)
    ))
}

fn level_params(
    b: u64,
    k: Option<i64>,
    l: Option<u64>,
    c: f64,
    consts: &ProofConstants,
) -> CliResult<RenormParams> {
    match (k, l) {
        (Some(k), Some(l)) => Ok(RenormParams::overridden(b, k, l, c, consts)),
        (None, None) => Ok(renorm_constants(b, c, consts)?),
        _ => Err(CliError::Config(
            "`k` and `l` must be given together".into(),
        )),
    }
}

#[derive(Debug, Serialize)]
struct RenormalizeRecord {
    params: RenormParams,
    admissible: bool,
    charges_in: usize,
    charges_out: usize,
    eta_hat_0: i64,
    good: usize,
    isolated_heavy: usize,
    bad: usize,
    zbound: Option<pinlab::renorm::ZboundCheck>,
}

fn renormalize(p: &RenormalizeParams, ctx: &Context) -> CliResult<String> {
    let env = load_env(&p.env, &p.law, p.n_charges, ctx.seed)?;
    let consts = compute_constants(10_000);
    let c = constant_or_default(p.constant)?;
    let params = level_params(p.b.unwrap_or(env.level()), p.k, p.l, c, &consts)?;
    let dec = decompose(&env, &params)?;
    let renormalized = renormalized_environment(&env, &params, &dec)?;
    let zbound = if p.zbound {
        Some(verify_zbound(&env, &params, dec.surviving.len())?)
    } else {
        None
    };
    write_env(&renormalized, &ctx.path("renormalized.txt"))?;
    let record = RenormalizeRecord {
        params,
        admissible: params.admissible(),
        charges_in: env.len(),
        charges_out: renormalized.len(),
        eta_hat_0: dec.eta_hat_0,
        good: dec.count(BlockKind::Good),
        isolated_heavy: dec.count(BlockKind::IsolatedHeavy),
        bad: dec.count(BlockKind::Bad),
        zbound,
    };
    write_json(&record, &ctx.path("renormalize.json"))?;
    if let Some(check) = &record.zbound {
        if !(check.holds && check.bookkeeping_ok) {
            return Err(CliError::Violation(format!(
                "block bound fails: ln lhs = {}, ln rhs = {}",
                check.lhs.ln(),
                check.rhs.ln()
            )));
        }
    }
    Ok(format!(
        "{} charges -> {} at level {}",
        env.len(),
        renormalized.len(),
        params.b + 1
    ))
}

#[derive(Debug, Serialize)]
struct FlowSummary {
    start_level: u64,
    final_level: u64,
    exhausted: bool,
    final_c: f64,
    final_mu0: f64,
    final_lost_mass: f64,
}

fn iterate_measure(p: &IterateParams, ctx: &Context) -> CliResult<String> {
    let consts = compute_constants(10_000);
    let c = constant_or_default(p.constant)?;
    let policy = match (p.k, p.l) {
        (Some(k_b), Some(l_b)) => LevelPolicy::Fixed { k_b, l_b },
        (None, None) => LevelPolicy::LevelFormulas,
        _ => {
            return Err(CliError::Config(
                "`k` and `l` must be given together".into(),
            ))
        }
    };
    let start = p.law.build()?;
    let state = iterate(&start, c, p.b_max, p.x_max, p.tol, policy, &consts)?;
    state.write_history_csv(BufWriter::new(File::create(ctx.path("flow_history.csv"))?))?;
    let summary = FlowSummary {
        start_level: start.level(),
        final_level: state.b,
        exhausted: state.exhausted,
        final_c: state.c_const,
        final_mu0: state.law.mass0(),
        final_lost_mass: state.law.lost_mass(),
    };
    write_json(&summary, &ctx.path("flow_summary.json"))?;
    Ok(format!(
        "{} levels, final C = {:.9}",
        state.history.len(),
        state.c_const
    ))
}

/// One lemma check of the verify-bounds report.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaRecord {
    pub lemma: String,
    pub params: serde_json::Value,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Serialize)]
struct LemmaRow<'a> {
    lemma: &'a str,
    params: String,
    value: f64,
    bound: f64,
    holds: bool,
}

fn record(lemma: &str, params: serde_json::Value, check: BoundCheck) -> LemmaRecord {
    LemmaRecord {
        lemma: lemma.into(),
        params,
        value: check.value,
        bound: check.bound,
        holds: check.holds,
    }
}

fn worst(checks: impl IntoIterator<Item = BoundCheck>) -> BoundCheck {
    checks
        .into_iter()
        .max_by(|a, b| a.ratio().total_cmp(&b.ratio()))
        .expect("at least one check")
}

/// The full lemma suite at the sizes in `p`.
pub fn lemma_suite(p: &VerifyParams, cal_c: f64, seed: u64) -> CliResult<Vec<LemmaRecord>> {
    let consts = compute_constants(10_000);
    let mut out = vec![LemmaRecord {
        lemma: "gamma-predicate".into(),
        params: json!({ "gamma0": consts.gamma0 }),
        value: consts.gamma0,
        bound: consts.gamma0,
        holds: gamma_predicate(consts.gamma0),
    }];
    for c in [1.0, cal_c, 2.0 * cal_c] {
        let k = (consts.k0 + c.ln()).ceil();
        let sweep = theta_plus_sweep(p.theta_n, c, k, &consts)?;
        out.push(record(
            "renewal-sum",
            json!({ "C": c, "K": k, "n_max": p.theta_n }),
            worst(sweep),
        ));
    }
    let conv = conv_power_bound(p.conv_k, p.conv_n, &consts);
    out.push(LemmaRecord {
        lemma: "convolution-power".into(),
        params: json!({ "k_max": p.conv_k, "n_max": p.conv_n, "worst_k": conv.worst_k, "worst_n": conv.worst_n }),
        value: conv.worst_ratio,
        bound: 1.0,
        holds: conv.worst_ratio <= 1.0,
    });
    let mut rng = replica_rng(seed, 0);
    let k = (consts.k0 + cal_c.ln()).ceil();
    for i in 0..p.xi_sets {
        let b = [3.0, 5.0, 8.0][i % 3];
        let floor = ((2.0 / 3.0) * (b + k)).exp().floor() as u64 + 1;
        let count = rng.random_range(2..=20);
        let mut points = vec![0u64];
        for _ in 1..count {
            let last = *points.last().unwrap();
            points.push(last + floor + rng.random_range(0..3 * floor));
        }
        let check = xi(b, cal_c, k, &points, &consts)?;
        out.push(record(
            "point-removal",
            json!({ "b": b, "C": cal_c, "K": k, "points": points.len() }),
            check,
        ));
    }
    for (m, lo, hi) in [(2usize, 200u64, 2000u64), (3, 300, 1200)] {
        let sweep = a_mb_sweep(m, 100, lo, hi)?;
        let (z, check) = sweep
            .into_iter()
            .max_by(|a, b| a.1.ratio().total_cmp(&b.1.ratio()))
            .unwrap();
        out.push(record(
            "composition-sum",
            json!({ "m": m, "b": 100, "z_range": [lo, hi], "worst_z": z }),
            check,
        ));
    }
    for &b in &p.bnb_levels {
        let k_b = FlowLevel::from_constants(b, cal_c, &consts).k_b;
        let x = 2 * b + 2 * k_b as u64;
        let check = b_nb(1, b, x, k_b, None)?;
        out.push(LemmaRecord {
            lemma: "clustered-composition-sum".into(),
            params: json!({ "n": 1, "b": b, "x": x, "K": k_b, "log_scale": true }),
            value: check.ln_value,
            bound: check.ln_bound,
            holds: check.holds,
        });
    }
    Ok(out)
}

fn verify_bounds(p: &VerifyParams, ctx: &Context) -> CliResult<String> {
    let records = lemma_suite(p, renewal_constant()?, ctx.seed)?;
    let path = ctx.path(&format!("bounds.{}", p.format.extension()));
    match p.format {
        Format::Json => emit_report(&records, Format::Json, &path)?,
        Format::Csv => {
            let rows: Vec<LemmaRow> = records
                .iter()
                .map(|r| LemmaRow {
                    lemma: &r.lemma,
                    params: r.params.to_string(),
                    value: r.value,
                    bound: r.bound,
                    holds: r.holds,
                })
                .collect();
            emit_report(&rows, Format::Csv, &path)?;
        }
    }
    let failed: Vec<&LemmaRecord> = records.iter().filter(|r| !r.holds).collect();
    if failed.is_empty() {
        return Ok(format!("{} checks, all hold", records.len()));
    }
    let names: Vec<String> = failed
        .iter()
        .map(|r| format!("{} {}", r.lemma, r.params))
        .collect();
    Err(CliError::Violation(format!(
        "{} of {} checks fail: {}",
        failed.len(),
        records.len(),
        names.join("; ")
    )))
}

fn scan(p: &ScanParams, ctx: &Context) -> CliResult<String> {
    if p.depth > MAX_DEPTH {
        return Err(CliError::Config(format!(
            "depth {} above the cap {MAX_DEPTH}",
            p.depth
        )));
    }
    let c = constant_or_default(p.constant)?;
    let sizes = ScanSizes {
        n_charges: p.n_charges,
        replicas: p.replicas,
        depth: p.depth,
    };
    let results = scan_critical(&p.betas, &sizes, c, ctx.seed)?;
    emit_report(
        &results,
        p.format,
        &ctx.path(&format!("scan.{}", p.format.extension())),
    )?;
    let steps: Vec<_> = results
        .iter()
        .flat_map(|r| r.steps.iter().cloned())
        .collect();
    emit_report(
        &steps,
        p.format,
        &ctx.path(&format!("scan_steps.{}", p.format.extension())),
    )?;
    if let Some(r) = results.iter().find(|r| !r.bracket_ok()) {
        return Err(CliError::Violation(format!(
            "beta {}: final bracket does not separate the phases",
            r.beta
        )));
    }
    let slopes: Vec<String> = results
        .iter()
        .map(|r| format!("beta {}: slope {:.4}", r.beta, r.slope))
        .collect();
    Ok(slopes.join(", "))
}
