//! `tractorlab` command-line verifier.

mod config;
mod registry;
mod report;
mod suites;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use config::{RunConfig, Setup};
use report::{Report, RunInfo};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(#[from] tractorlab::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "tractorlab", version, about = "Numerical checks of weighted tractor calculus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suites named in a config file and write a JSON report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's suite list; repeatable.
        #[arg(long = "suite")]
        suites: Vec<String>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report destination; `-` for stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print every suite and identity check.
    ListChecks,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TRACTORLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("TRACTORLAB_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))
}

fn run(setup: &Setup) -> Result<Report, CliError> {
    let start = Instant::now();
    let mut out = suites::Outputs::default();
    for suite in &setup.config.suites {
        suites::run_suite(suite, setup, &mut out)?;
    }
    let c = &setup.config;
    let failed = out.rows.iter().filter(|r| !r.pass).count();
    Ok(Report {
        tool: "tractorlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run: RunInfo {
            manifold: setup.label.clone(),
            dim: setup.smms.dim(),
            v: setup.smms.v.source().to_string(),
            m: setup.smms.m,
            mu: setup.smms.mu,
            scale: c.smms.as_ref().and_then(|s| s.scale.clone()),
            suites: c.suites.clone(),
            tolerance: c.tolerance,
            samples: c.samples,
            seed: c.seed,
        },
        passed: out.rows.len() - failed,
        failed,
        rows: out.rows,
        holonomy: out.holonomy,
        singularity_sets: out.singular,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn verify(
    path: PathBuf,
    suites: Vec<String>,
    tol: Option<f64>,
    samples: Option<usize>,
    seed: Option<u64>,
    report: Option<PathBuf>,
) -> Result<bool, CliError> {
    let mut cfg = RunConfig::load(&path)?;
    if !suites.is_empty() {
        cfg.suites = suites;
    }
    cfg.tolerance = tol.unwrap_or(cfg.tolerance);
    cfg.samples = samples.unwrap_or(cfg.samples);
    cfg.seed = seed.unwrap_or(cfg.seed);
    if report.is_some() {
        cfg.report_path = report;
    }
    let setup = cfg.setup()?;
    configure_threads()?;
    let report = run(&setup)?;
    for r in &report.rows {
        let res = r.max_residual.map_or("-".into(), |x| format!("{x:.3e}"));
        let thr = r.threshold.map_or(String::new(), |x| format!(" < {x:.0e}"));
        let note = r.note.as_deref().map_or(String::new(), |n| format!("  ({n})"));
        eprintln!("{} {}/{} {res}{thr}{note}", if r.pass { "PASS" } else { "FAIL" }, r.suite, r.name);
    }
    eprintln!("{} passed, {} failed", report.passed, report.failed);
    let body = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    match setup.config.report_path.as_deref() {
        Some(p) if p.as_os_str() != "-" => std::fs::write(p, body)?,
        _ => print!("{body}"),
    }
    Ok(report.all_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListChecks => {
            for line in registry::listing() {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Command::Verify { config, suites, tol, samples, seed, report } => {
            match verify(config, suites, tol, samples, seed, report) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(1),
                Err(e) => {
                    eprintln!("tractorlab: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
    }
}
