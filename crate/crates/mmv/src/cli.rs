use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmv_core::{Anchor, McConfig};

use crate::commands;
use crate::config::{RunConfig, DEFAULT_SEED};
use crate::error::CliError;
use crate::output::Report;

/// Environment override for the output directory. `--out` wins over it.
pub const OUT_DIR_ENV: &str = "MMV_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "mmv", version, about = "Monotone mean-variance portfolio solver")]
pub struct Cli {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides MMV_OUT_DIR and the config)
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed override for every Monte Carlo stage
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve for G and write the surface with its residual
    Solve,
    /// Compare F with Feynman-Kac estimates at the probe points
    Oracle,
    /// Certify the HJBI conditions on a state grid
    Verify,
    /// Pathwise identity, objective estimates and saddle certification
    Simulate,
    /// Monotone against classical mean-variance strategies
    CompareMv,
    /// Tabulate the saddle controls over (z, t)
    Strategy,
    /// Check the standing assumptions on the model coefficients
    Audit,
    /// Run the constant-coefficient example end to end
    ExampleBs,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let Some(path) = &cli.config else {
        return Err(CliError::config("--config", "this subcommand needs a configuration file"));
    };
    let cfg = RunConfig::load(path)?;
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>, env: Option<PathBuf>) -> PathBuf {
    cli.out
        .clone()
        .or(env)
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn dispatch(cli: &Cli, env_out: Option<PathBuf>) -> Result<Report, CliError> {
    if cli.command == Command::ExampleBs {
        let (anchor, mc, cfg) = match &cli.config {
            Some(_) => {
                let cfg = load(cli)?;
                (cfg.anchor, cfg.mc, Some(cfg))
            }
            None => {
                let seed = cli.seed.unwrap_or(DEFAULT_SEED);
                (Anchor::new(1.0, 0.5, 0.0, 0.0)?, McConfig::new(100_000, 64, seed)?, None)
            }
        };
        let out = out_dir(cli, cfg.as_ref(), env_out);
        return commands::cmd_example_bs(anchor, &mc, &out);
    }
    let cfg = load(cli)?;
    let out = out_dir(cli, Some(&cfg), env_out);
    run_command(cli.command, &cfg, &out)
}

pub fn run_command(command: Command, cfg: &RunConfig, out: &Path) -> Result<Report, CliError> {
    match command {
        Command::Solve => commands::cmd_solve(cfg, out),
        Command::Oracle => commands::cmd_oracle(cfg, out),
        Command::Verify => commands::cmd_verify(cfg, out),
        Command::Simulate => commands::cmd_simulate(cfg, out),
        Command::CompareMv => commands::cmd_compare_mv(cfg, out),
        Command::Strategy => commands::cmd_strategy(cfg, out),
        Command::Audit => commands::cmd_audit(cfg, out),
        Command::ExampleBs => commands::cmd_example_bs(cfg.anchor, &cfg.mc, out),
    }
}

/// Parses arguments, runs, prints the report and maps the outcome to the
/// exit code: 0 all checks pass, 1 a check failed, 2 configuration or IO.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    match dispatch(&cli, env_out) {
        Ok(report) => {
            print!("{}", report.render());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
