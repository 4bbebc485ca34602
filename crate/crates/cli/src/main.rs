//! `ntcp`: fit, estimate, bootstrap, simulate and export from the command line.

mod cohort_csv;
mod commands;
mod config;
mod error;
mod output;

use clap::{Args, Parser, Subcommand};
use config::{Overrides, RunConfig};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "ntcp", version, about = "Causal NTCP from dose-volume histogram cohorts")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "ntcp-out")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print the config JSON schema and exit.
    #[arg(long)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to the input cohort.
    Fit,
    /// Pointwise grid and intervention estimates.
    Estimate(EstimateArgs),
    /// Clustered-bootstrap intervals for the intervention estimates.
    Bootstrap(StrictArgs),
    /// Repeated-sampling experiment against the truth oracle.
    Simulate,
    /// Fitted and true surfaces on a fine lattice, for plotting.
    ExportContours(FitSource),
}

#[derive(Args, Debug)]
struct FitSource {
    /// Directory written by `ntcp fit`; fits inline when absent.
    #[arg(long)]
    fit: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StrictArgs {
    /// Fail (exit 4) when importance weights breach the positivity threshold.
    #[arg(long)]
    strict_positivity: bool,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    source: FitSource,
    #[command(flatten)]
    strict: StrictArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_schema {
        print!("{}", config::SCHEMA);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Validation("no subcommand given".into()));
    };
    let overrides = Overrides { seed: cli.seed, workers: cli.workers };
    let path = cli.config.as_deref();
    let cfg = RunConfig::load(path, &overrides)?;
    let out = cli.out.as_path();
    match command {
        Command::Fit => commands::cmd_fit(&cfg, path, out),
        Command::Estimate(a) => {
            commands::cmd_estimate(&cfg, path, out, a.source.fit.as_deref(), a.strict.strict_positivity)
        }
        Command::Bootstrap(a) => commands::cmd_bootstrap(&cfg, path, out, a.strict_positivity),
        Command::Simulate => commands::cmd_simulate(&cfg, path, out),
        Command::ExportContours(a) => commands::cmd_export_contours(&cfg, path, out, a.fit.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
