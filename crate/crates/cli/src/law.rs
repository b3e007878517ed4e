use crate::error::{CliError, CliResult};
use clap::{Args, ValueEnum};
use pinlab::environment::{mu_beta, ChargeLaw};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    /// Charge `level` with probability `p`, zero otherwise.
    #[default]
    TwoPoint,
    /// Charge `level` with probability `e^{-exponent * level}`.
    MuBeta,
    /// Probabilities `atoms[i]` of charge `level + i`.
    Atoms,
}

/// One-site charge law given on the command line or in a config table.
#[derive(Debug, Clone, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, default)]
pub struct LawArgs {
    #[arg(long = "law", value_enum)]
    pub kind: Option<LawKind>,
    /// Smallest positive charge (the intensity for two-point laws).
    #[arg(long)]
    pub level: Option<u64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub exponent: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub atoms: Vec<f64>,
}

fn missing(what: &str, kind: LawKind) -> CliError {
    CliError::Config(format!("law {kind:?} needs `{what}`"))
}

impl LawArgs {
    pub fn is_given(&self) -> bool {
        self.level.is_some()
    }

    pub fn build(&self) -> CliResult<ChargeLaw> {
        let kind = self.kind.unwrap_or_default();
        let level = self.level.ok_or_else(|| missing("level", kind))?;
        let law = match kind {
            LawKind::TwoPoint => {
                ChargeLaw::two_point(level, self.p.ok_or_else(|| missing("p", kind))?)?
            }
            LawKind::MuBeta => mu_beta(
                level as f64,
                self.exponent.ok_or_else(|| missing("exponent", kind))?,
            )?,
            LawKind::Atoms => {
                if self.atoms.is_empty() {
                    return Err(missing("atoms", kind));
                }
                let positive: f64 = self.atoms.iter().sum();
                ChargeLaw::new(level, 1.0 - positive, self.atoms.clone(), 0.0)?
            }
        };
        Ok(law)
    }
}
