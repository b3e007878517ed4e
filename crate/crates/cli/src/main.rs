use clap::Parser;
use pinlab_cli::{load_config, run_config, CliError, Command, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Disordered pinning experiments: partition functions, renormalization,
/// measure flows, lemma checks and critical-point scans.
#[derive(Debug, Parser)]
#[command(name = "pinlab", version)]
struct Cli {
    /// Run the experiment described by a TOML config instead of a subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let config = match (cli.config, cli.command) {
        (Some(path), None) => load_config(&path)?,
        (None, Some(command)) => RunConfig {
            command,
            seed: None,
            out: None,
            threads: None,
        },
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "give a subcommand or --config, not both".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "nothing to do: give a subcommand or --config".into(),
            ))
        }
    };
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let name = config.command.name();
    run_config(&config, cli.seed, cli.out).map(|summary| format!("{name}: {summary}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pinlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
