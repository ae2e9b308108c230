//! `certun`: calibrate unlearning noise, run and sweep unlearning
//! pipelines, and verify the accountant against independent oracles.

mod calibrate;
mod config;
mod error;
mod output;
mod run;
mod setup;
mod sweep;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "certun",
    version,
    about = "Certified unlearning by noisy fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the noise level and step count certifying an (ε, δ) budget.
    Calibrate(calibrate::CalibrateArgs),
    /// Run one unlearning pipeline from a config file.
    Run(run::RunArgs),
    /// Run methods × budgets × seeds and tabulate accuracy.
    Sweep(sweep::SweepArgs),
    /// Check the accountant and gradients against independent oracles.
    Verify(verify::VerifyArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate::cmd_calibrate(a),
        Command::Run(a) => run::cmd_run(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::Verify(a) => verify::cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
