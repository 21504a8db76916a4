//! Command-line front end for `ringsim`: runs experiments from TOML configs,
//! sweeps stepsizes, audits trace directories and renders SVG plots.
//!
//! Exit codes: 0 on success, 1 for configuration or I/O errors, 2 when an
//! audit check fails or a run diverges.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use ringsim::SimError;

pub mod audit;
pub mod config;
pub mod curves;
pub mod experiment;
pub mod partition;
pub mod plot;
pub mod run;
pub mod sweep;

pub use config::RunConfig;
pub use experiment::Experiment;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn from_sim(e: SimError) -> Self {
        match e {
            SimError::NumericDomain(msg) => CliError::Diverged(msg),
            other => CliError::Config(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Diverged(_) | CliError::Failed(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ringsim", version, about = "Virtual-time simulator for asynchronous distributed SGD")]
pub struct Cli {
    /// Where run and sweep artifacts go.
    #[arg(long, global = true, env = "RINGSIM_OUT_DIR", default_value = "ringsim-out")]
    pub out_dir: PathBuf,
    /// Seeds overriding the config: `a..b` or `a,b,c`.
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Concurrent runs (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every algorithm and seed of a config with its stepsize policy.
    Run {
        config: PathBuf,
        /// Keep iterates and replay every update direction from the event log.
        #[arg(long)]
        replay: bool,
    },
    /// Tune the stepsize over a grid within the configured time budget.
    Sweep { config: PathBuf },
    /// Check the CSV traces below a directory.
    Audit { trace_dir: PathBuf },
    /// Median and IQR convergence plot of the traces below a directory.
    Plot {
        trace_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// Defaults to `<trace-dir>/convergence.svg`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the per-client class counts of a softmax config's partition.
    PartitionDemo { config: PathBuf },
}

fn load(cli: &Cli, path: &std::path::Path) -> Result<Experiment, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = &cli.seeds {
        cfg.seeds = config::parse_seeds(s)?;
    }
    Experiment::new(cfg)
}

fn failures(lines: &[audit::AuditLine]) -> Result<(), CliError> {
    match audit::report_failures(lines) {
        0 => Ok(()),
        k => Err(CliError::Failed(format!("{k} audit check(s) failed"))),
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run { config, replay } => {
            let exp = load(cli, config)?;
            let report = run::run(&exp, &cli.out_dir, *replay)?;
            println!("{} runs written to {}", report.runs.len(), cli.out_dir.display());
            failures(&report.audit)
        }
        Command::Sweep { config } => {
            let exp = load(cli, config)?;
            let report = sweep::sweep(&exp, &cli.out_dir)?;
            for b in &report.best {
                match (b.gamma, b.final_median) {
                    (Some(g), Some(v)) => println!("{}: best gamma {g} (final median {v:e})", b.algorithm),
                    _ => println!("{}: every stepsize diverged", b.algorithm),
                }
            }
            failures(&report.audit)
        }
        Command::Audit { trace_dir } => {
            let lines = audit::audit_dir(trace_dir)?;
            audit::write_jsonl(&trace_dir.join("csv-audit.jsonl"), &lines)?;
            println!("{} checks on {}", lines.len(), trace_dir.display());
            failures(&lines)
        }
        Command::Plot { trace_dir, window, output } => {
            let path = plot::plot_dir(trace_dir, *window, output.clone())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::PartitionDemo { config } => {
            let exp = load(cli, config)?;
            print!("{}", partition::partition_table(&exp)?);
            Ok(())
        }
    }
}

pub fn run_cli() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
