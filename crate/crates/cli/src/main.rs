use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgdlm_cli::pipeline::Runner;

/// Sequential multivariate forecasting with simultaneous-graphical DLMs.
#[derive(Parser)]
#[command(name = "sgdlm", version, about)]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true, default_value = "sgdlm.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic returns panel with known ground truth.
    Simulate,
    /// Rank candidate parents per series and fix the sparse structure.
    Phase1,
    /// Select discount factors and build the forecast-phase priors.
    Phase2,
    /// Run the daily forecast/update loop (resumes where it left off).
    Phase3,
    /// Fit and forecast the per-series univariate baseline.
    DlmBaseline,
    /// Summarize forecast accuracy, calibration, and sampler health.
    Evaluate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = Runner::from_config_file(&cli.config).and_then(|runner| match cli.command {
        Command::Simulate => runner.simulate(),
        Command::Phase1 => runner.phase1(),
        Command::Phase2 => runner.phase2(),
        Command::Phase3 => runner.phase3(),
        Command::DlmBaseline => runner.dlm_baseline(),
        Command::Evaluate => runner.evaluate(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::FAILURE
        }
    }
}
