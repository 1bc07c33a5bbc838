use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochrkhs_cli::{run_experiment, ExperimentConfig, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(name = "stochrkhs", version, about = "Run kernel-based stochastic integration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel norms by both routes, with optional restriction chains.
    Kernel(Common),
    /// Stochastic integrals, isometry and round trip on simulated paths.
    Integrate(Common),
    /// Structural condition, deflator martingale tests and the viability bound.
    Viability(Common),
    /// Superhedging duality and completeness on a finite tree.
    HedgeTree(Common),
    /// HJM drift restriction and bond martingale test.
    Hjm(Common),
    /// Structural diagnostic and round-trip scaling under grid refinement.
    RefineStudy(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress messages.
    #[arg(long)]
    quiet: bool,
    /// Worker threads for the simulation.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Kernel(c) => (ExperimentKind::Kernel, c),
        Command::Integrate(c) => (ExperimentKind::Integrate, c),
        Command::Viability(c) => (ExperimentKind::Viability, c),
        Command::HedgeTree(c) => (ExperimentKind::HedgeTree, c),
        Command::Hjm(c) => (ExperimentKind::Hjm, c),
        Command::RefineStudy(c) => (ExperimentKind::RefineStudy, c),
    };
    let opts = RunOptions { seed: common.seed, out: common.out, quiet: common.quiet, threads: common.threads };
    let result = ExperimentConfig::load(&common.config).and_then(|cfg| run_experiment(kind, &cfg, &opts));
    match result {
        Ok(bundle) => {
            if !common.quiet {
                for v in &bundle.verdicts {
                    println!("{}: {}", v.name, v.verdict);
                }
                println!("artifacts in {}", bundle.out_dir.display());
            }
            ExitCode::from(bundle.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
