//! TOML run configuration.
//!
//! ```toml
//! experiment = "free-energy"   # any subcommand name
//! seed = 7                     # optional, default 0
//! out = "results"              # optional, default "."
//! threads = 4                  # optional
//!
//! [params]                     # the subcommand's flags, snake_case
//! n_charges = 2000
//! replicas = 8
//!
//! [params.law]
//! kind = "two-point"
//! level = 6
//! p = 0.01
//! ```

use crate::commands::{
    Command, FreeEnergyParams, GenEnvParams, IterateParams, PartitionParams, RenormalizeParams,
    ScanParams, VerifyParams,
};
use crate::error::{CliError, CliResult};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile<P> {
    experiment: String,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    params: Option<P>,
}

fn parse<P: DeserializeOwned>(text: &str) -> CliResult<(ConfigFile<P>, Option<P>)> {
    let mut file: ConfigFile<P> =
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let params = file.params.take();
    Ok((file, params))
}

fn build<P: DeserializeOwned>(
    text: &str,
    wrap: fn(P) -> Command,
    default: Option<P>,
) -> CliResult<RunConfig> {
    let (file, params) = parse::<P>(text)?;
    let params = params.or(default).ok_or_else(|| {
        CliError::Config(format!(
            "experiment `{}` needs a [params] table",
            file.experiment
        ))
    })?;
    Ok(RunConfig {
        command: wrap(params),
        seed: file.seed,
        out: file.out,
        threads: file.threads,
    })
}

/// Parses a config; schema errors carry the TOML line and column.
pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let experiment = table
        .get("experiment")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Config("missing string key `experiment`".into()))?;
    match experiment {
        "gen-env" => build::<GenEnvParams>(text, Command::GenEnv, None),
        "partition" => build::<PartitionParams>(text, Command::Partition, None),
        "free-energy" => build::<FreeEnergyParams>(text, Command::FreeEnergy, None),
        "renormalize" => build::<RenormalizeParams>(text, Command::Renormalize, None),
        "iterate-measure" => build::<IterateParams>(text, Command::IterateMeasure, None),
        "verify-bounds" => {
            build::<VerifyParams>(text, Command::VerifyBounds, Some(VerifyParams::default()))
        }
        "scan-critical" => build::<ScanParams>(text, Command::ScanCritical, None),
        other => Err(CliError::Config(format!("unknown experiment `{other}`"))),
    }
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
