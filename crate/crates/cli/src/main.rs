use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidam::harness::{self, ExperimentConfig, Manifest};
use vidam::{Error, Result};

/// Variational integrators, discrete adjoints and optimal control experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error tables and observed orders for a pendulum under constant control.
    Converge(RunArgs),
    /// Optimal control by shooting with Barzilai-Borwein steps.
    Ocp(RunArgs),
    /// Uncontrolled damped beam released at rest.
    BeamDamping(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig, command: &str) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output.directory.clone())
        .unwrap_or_else(|| Path::new("out").join(command))
}

type Runner = fn(&ExperimentConfig, &str, &Path) -> Result<Manifest>;

fn run(cli: Cli) -> Result<(Manifest, PathBuf)> {
    let (args, name, runner): (_, _, Runner) = match &cli.command {
        Command::Converge(a) => (a, "converge", harness::run_convergence),
        Command::Ocp(a) => (a, "ocp", harness::run_ocp),
        Command::BeamDamping(a) => (a, "beam-damping", harness::run_damping_demo),
    };
    let (cfg, text) = ExperimentConfig::load(&args.config)?;
    let out = out_dir(args, &cfg, name);
    Ok((runner(&cfg, &text, &out)?, out))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((m, out)) => {
            let mut line = format!("{} {:?}: wrote {} files to {}", m.command, m.model, m.files.len(), out.display());
            if let Some(j) = m.objective {
                line += &format!(", J = {j:.6e}");
            }
            if let Some(s) = &m.optimizer_status {
                line += &format!(" ({s} after {} iterations)", m.iterations.unwrap_or(0));
            }
            for (k, v) in &m.orders {
                line += &format!(", order {k} = {v:.3}");
            }
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(3)
        }
    }
}
