//! `subshrink`: subgroup shrinkage analyses from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subgroup_shrink_cli::analyze::cmd_analyze;
use subgroup_shrink_cli::calibrate::{cmd_prior_calibrate, format_table};
use subgroup_shrink_cli::config::{parse_formats, CommandKind, Overrides, RunConfig};
use subgroup_shrink_cli::error::{CliError, Result};
use subgroup_shrink_cli::simulate::cmd_simulate;

#[derive(Parser)]
#[command(
    name = "subshrink",
    version,
    about = "Bayesian shrinkage estimates of subgroup treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forest tables and plots for one trial dataset.
    Analyze(Common),
    /// Simulation campaign over the built-in scenarios.
    Simulate(Common),
    /// Implied prior quantiles of subgroup effects.
    PriorCalibrate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "SUBSHRINK_THREADS")]
    threads: Option<usize>,
    /// Comma-separated output formats: csv, json, svg.
    #[arg(long = "format")]
    format: Option<String>,
}

impl Common {
    fn load(&self, command: CommandKind) -> Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            formats: self.format.as_deref().map(parse_formats).transpose()?,
        };
        RunConfig::load(self.config.as_deref(), command, &overrides)
    }
}

fn print_warnings(warnings: &[String]) {
    if warnings.is_empty() {
        return;
    }
    let bar = "!".repeat(72);
    eprintln!("{bar}");
    eprintln!(
        "WARNING: {} issue(s) need attention before using these results",
        warnings.len()
    );
    for w in warnings {
        eprintln!("  - {w}");
    }
    eprintln!("{bar}");
}

fn init_threads(cfg: &RunConfig) -> Result<()> {
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::config("threads must be at least 1"));
        }
        // Ignore a pool that is already built; only the first call wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(c) => {
            let cfg = c.load(CommandKind::Analyze)?;
            init_threads(&cfg)?;
            let outcome = cmd_analyze(&cfg)?;
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            print_warnings(&outcome.warnings());
        }
        Command::Simulate(c) => {
            let cfg = c.load(CommandKind::Simulate)?;
            init_threads(&cfg)?;
            let outcome = cmd_simulate(&cfg)?;
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            print_warnings(&outcome.warnings());
        }
        Command::PriorCalibrate(c) => {
            let cfg = c.load(CommandKind::PriorCalibrate)?;
            init_threads(&cfg)?;
            let outcome = cmd_prior_calibrate(&cfg)?;
            print!("{}", format_table(&outcome.rows));
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
