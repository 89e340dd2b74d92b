//! The `owrlab` command line.
//!
//! Exit codes: 0 on success, 1 when the input (arguments, configuration,
//! files) is invalid, 2 when a run fails after it started.

pub mod commands;
pub mod config;
pub mod selftest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::owr::Variant;
use config::{load_config, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "owrlab", version, about = "Open-world recognition experiments on a synthetic multi-domain benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the benchmark domains to dataset files.
    Generate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Select hyperparameters for one method on the training domain.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        method: Variant,
    },
    /// Train and evaluate every method, plugin and seed of a configuration.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides `output_dir` from the configuration.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Aggregate results into the cross-domain table.
    Report {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the gradient and formula checks.
    Selftest,
}

fn prepare(path: &PathBuf) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path)?;
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate { config, output } => {
            let cfg = prepare(&config)?;
            for p in commands::generate(&cfg, &output)? {
                println!("{}", p.display());
            }
        }
        Command::Validate { config, method } => {
            let cfg = prepare(&config)?;
            let out = commands::validate_method(&cfg, method)?;
            let b = &out.result.best;
            println!(
                "best {}: lr={} weight_decay={} lambda={} gamma={} tau_lr={} neg_weight={} tau_grid_points={}",
                method, b.lr, b.weight_decay, b.lambda, b.gamma, b.tau_lr, b.neg_weight, b.tau_grid_points
            );
            println!("{}", out.config_path.display());
            println!("{}", out.scores_path.display());
        }
        Command::Run { config, jobs, output } => {
            let mut cfg = prepare(&config)?;
            if let Some(dir) = output {
                cfg.output_dir = dir;
            }
            if jobs == 0 {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let summary = commands::run(&cfg, jobs)?;
            print!("{}", commands::format_table(&crate::eval::report_table(&summary.rows)));
            println!("{}", summary.results_path.display());
        }
        Command::Report { input, output } => {
            let table = commands::report(&input, &output)?;
            print!("{}", commands::format_table(&table));
        }
        Command::Selftest => {
            let checks = selftest::run_selftest()?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", checks.len());
                return Ok(EXIT_RUNTIME);
            }
        }
    }
    Ok(EXIT_OK)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn command_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
