//! Command-line front end for pinlab: subcommands, TOML run configs,
//! CSV/JSON reports and critical-point scans.

pub mod commands;
pub mod config;
pub mod error;
pub mod law;
pub mod report;
pub mod scan;

pub use commands::{Command, Context};
pub use config::{load_config, parse_config, RunConfig};
pub use error::{CliError, CliResult};
pub use report::{emit_report, Format};

use std::path::PathBuf;

/// Runs a configured command; flag values override the config's.
pub fn run_config(
    config: &RunConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<String> {
    let ctx = Context {
        seed: seed.or(config.seed).unwrap_or(0),
        out: out
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    config.command.run(&ctx)
}
