//! `fci`: staged flow-based conformal inference experiments.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fci_core::conformal::PValueMode;

use crate::config::{ConfigError, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "fci",
    version,
    about = "Flow-based conformal inference experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load data and write train, calibration and test splits.
    GenData(Common),
    /// Train one roundtrip flow per class, plus the baseline classifier.
    Train(Common),
    /// Build per-class score pools and the APS threshold.
    Calibrate(Common),
    /// Write p-values and predictive sets for the test files.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Predict this CSV instead of the generated test files.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Write reports, histograms and the method comparison table.
    Evaluate(Common),
    /// Run every stage in order.
    RunExperiment(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Smoothed,
    PaperLiteral,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; defaults to the built-in three-class task.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Repeat for several rates; replaces the configured list.
    #[arg(long = "contamination-rate")]
    contamination_rate: Vec<f64>,
    #[arg(long, value_enum)]
    p_value_mode: Option<Mode>,
    #[arg(long, value_enum)]
    baselines: Option<Switch>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let overrides = Overrides {
            seed: self.seed,
            alpha: self.alpha,
            out: self.out.clone(),
            rates: self.contamination_rate.clone(),
            p_value_mode: self.p_value_mode.map(|m| match m {
                Mode::Smoothed => PValueMode::Smoothed,
                Mode::PaperLiteral => PValueMode::PaperLiteral,
            }),
            baselines: self.baselines.map(|s| matches!(s, Switch::On)),
        };
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c.load()?),
        Command::Train(c) => commands::train(&c.load()?),
        Command::Calibrate(c) => commands::calibrate(&c.load()?),
        Command::Predict { common, test } => commands::predict(&common.load()?, test.as_deref()),
        Command::Evaluate(c) => commands::evaluate(&c.load()?),
        Command::RunExperiment(c) => commands::run_experiment(&c.load()?),
    }
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || matches!(
                e.downcast_ref::<fci_core::Error>(),
                Some(fci_core::Error::Config(_))
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 1 } else { 2 })
        }
    }
}
