use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use agetumor_cli::commands::diff_table;
use agetumor_cli::{cmd_diagnose, cmd_diff, cmd_run, cmd_sweep, CliError, RunSpec};

/// Age-structured mechanical tumor growth simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation at `sim.m`.
    Run {
        config: PathBuf,
        /// Output directory (overrides `sim.output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every exponent in `sim.m_values` and report the trend metrics.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two snapshots under the L1, L2 and max norms.
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// Configuration to use instead of the one embedded in `a`.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Recompute the diagnostics row of a snapshot.
    Diagnose {
        snapshot: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let setup = RunSpec::load(&config)?;
            let outcome = cmd_run(&setup, out.as_deref())?;
            let last = outcome
                .result
                .records
                .last()
                .context("run produced no records")?;
            println!(
                "t = {}  steps = {}  mass = {:e}  max p = {:e}  front = {}",
                last.t,
                outcome.result.steps.len(),
                last.total_mass,
                last.p_linf,
                last.front_position
            );
            println!(
                "wrote {} and {}",
                outcome.diagnostics_path.display(),
                outcome.snapshot_path.display()
            );
        }
        Command::Sweep { config, out } => {
            let setup = RunSpec::load(&config)?;
            let outcome = cmd_sweep(&setup, out.as_deref())?;
            print!("{}", outcome.report.metrics_csv());
            println!("{:?}", outcome.report.verdicts);
            println!("wrote {}", outcome.metrics_path.display());
        }
        Command::Diff { a, b, config } => {
            print!("{}", diff_table(&cmd_diff(&a, &b, config.as_deref())?));
        }
        Command::Diagnose { snapshot, config } => {
            print!("{}", cmd_diagnose(&snapshot, config.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<CliError>()
                .map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
