//! Config-driven experiment runner for `stochrkhs`.
//!
//! [`run_experiment`] executes one experiment described by an
//! [`ExperimentConfig`] and writes an artifact bundle into the output
//! directory: CSV tables, `report.txt` with every Monte Carlo statistic
//! (mean, standard error, z-score) and `summary.json` with the verdicts.
//! CSV files depend only on the configuration and the seed, never on the
//! thread count; the report header carries the only timestamp.

pub mod config;
pub mod error;
mod experiments;
pub mod report;

use std::path::PathBuf;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{CliError, CliResult};
pub use report::{Bundle, VerdictEntry};

use report::Report;

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub quiet: bool,
    /// Size of the worker pool; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

/// Runs one experiment and writes its artifact bundle.
pub fn run_experiment(kind: ExperimentKind, config: &ExperimentConfig, opts: &RunOptions) -> CliResult<Bundle> {
    if let Some(declared) = config.experiment {
        if declared != kind {
            return Err(CliError::Config(format!("config declares experiment `{declared}` but `{kind}` was requested")));
        }
    }
    let mut cfg = config.clone();
    if opts.seed.is_some() {
        cfg.seed = opts.seed;
    }
    cfg.validate(kind)?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(|p| cfg.resolve(p)))
        .ok_or_else(|| CliError::Config("no output directory (config `out` or --out)".into()))?;
    let seed = cfg.seed.unwrap_or_default();
    let run = move || -> CliResult<Bundle> {
        let mut rep = Report::new(kind, seed, &out, opts.quiet)?;
        match kind {
            ExperimentKind::Kernel => experiments::kernel(&cfg, &mut rep)?,
            ExperimentKind::Integrate => experiments::integrate_experiment(&cfg, &mut rep)?,
            ExperimentKind::Viability => experiments::viability(&cfg, &mut rep)?,
            ExperimentKind::HedgeTree => experiments::hedge_tree(&cfg, &mut rep)?,
            ExperimentKind::Hjm => experiments::hjm(&cfg, &mut rep)?,
            ExperimentKind::RefineStudy => experiments::refine_study(&cfg, &mut rep)?,
        }
        rep.finish()
    };
    match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("cannot build a {n}-thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}
