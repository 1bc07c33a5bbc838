//! Artifact bundle: CSV tables, a text report and a JSON summary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use stochrkhs::io::{fmt_real, write_table};
use stochrkhs::stats::McEstimate;

use crate::config::ExperimentKind;
use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerdictEntry {
    pub name: String,
    pub verdict: String,
    pub detail: String,
}

impl VerdictEntry {
    pub fn passed(&self) -> bool {
        self.verdict == "PASS"
    }
}

/// What `run_experiment` leaves behind.
#[derive(Debug, Clone, Serialize)]
pub struct Bundle {
    pub experiment: String,
    pub seed: u64,
    pub all_pass: bool,
    pub verdicts: Vec<VerdictEntry>,
    /// CSV files written, relative to the output directory.
    pub files: Vec<String>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Bundle {
    /// Process exit code: 0 when every verdict passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_pass {
            0
        } else {
            1
        }
    }
}

pub(crate) struct Report {
    kind: ExperimentKind,
    seed: u64,
    out: PathBuf,
    quiet: bool,
    lines: Vec<String>,
    verdicts: Vec<VerdictEntry>,
    files: Vec<String>,
}

impl Report {
    pub fn new(kind: ExperimentKind, seed: u64, out: &Path, quiet: bool) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.display().to_string(), source })?;
        Ok(Self { kind, seed, out: out.to_path_buf(), quiet, lines: Vec::new(), verdicts: Vec::new(), files: Vec::new() })
    }

    pub fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("[{}] {msg}", self.kind);
        }
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        self.csv_owned(name, &header, rows)
    }

    pub fn csv_owned(&mut self, name: &str, header: &[String], rows: Vec<Vec<String>>) -> CliResult<()> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        write_table(BufWriter::new(file), header, rows).context("csv output")?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Streams CSV text produced by one of the core writers.
    pub fn csv_with(&mut self, name: &str, write: impl FnOnce(BufWriter<File>) -> stochrkhs::Result<()>) -> CliResult<()> {
        let path = self.out.join(name);
        let file = File::create(&path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        write(BufWriter::new(file)).context("csv output")?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn line(&mut self, text: impl Into<String>) {
        self.lines.push(text.into());
    }

    pub fn section(&mut self, title: &str) {
        self.lines.push(String::new());
        self.lines.push(format!("== {title} =="));
    }

    /// Records a Monte Carlo statistic with its mean, standard error and
    /// z-score against `target`.
    pub fn stat(&mut self, name: &str, est: &McEstimate<f64>, target: f64) {
        self.lines.push(format!(
            "{name}: mean={} se={} target={} z={:.3} n={}",
            fmt_real(est.mean),
            fmt_real(est.std_error),
            fmt_real(target),
            est.z_score(target),
            est.samples
        ));
    }

    pub fn verdict(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        let entry = VerdictEntry {
            name: name.into(),
            verdict: if pass { "PASS" } else { "FAIL" }.to_string(),
            detail: detail.into(),
        };
        self.lines.push(format!("verdict {}: {} ({})", entry.name, entry.verdict, entry.detail));
        self.progress(&format!("{}: {}", entry.name, entry.verdict));
        self.verdicts.push(entry);
    }

    pub fn finish(self) -> CliResult<Bundle> {
        let all_pass = self.verdicts.iter().all(VerdictEntry::passed);
        let generated = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut text = String::new();
        let _ = writeln!(text, "experiment: {}", self.kind);
        let _ = writeln!(text, "seed: {}", self.seed);
        let _ = writeln!(text, "generated (unix seconds): {generated}");
        let _ = writeln!(text, "overall: {}", if all_pass { "PASS" } else { "FAIL" });
        for l in &self.lines {
            let _ = writeln!(text, "{l}");
        }
        let report = self.out.join("report.txt");
        fs::write(&report, text).map_err(|source| CliError::Io { path: report.display().to_string(), source })?;
        let bundle = Bundle {
            experiment: self.kind.to_string(),
            seed: self.seed,
            all_pass,
            verdicts: self.verdicts,
            files: self.files,
            out_dir: self.out,
        };
        let summary = bundle.out_dir.join("summary.json");
        let json = serde_json::to_string_pretty(&bundle).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(&summary, json + "\n").map_err(|source| CliError::Io { path: summary.display().to_string(), source })?;
        Ok(bundle)
    }
}

pub(crate) fn real(x: f64) -> String {
    fmt_real(x)
}
