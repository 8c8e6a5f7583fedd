//! `lidarsim` command-line entry point.

mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::config::PipelineConfig;
use crate::error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    let cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::SynthFixture(a) => commands::synth_fixture(a, &cfg),
        Command::GenLidarImages(a) => commands::gen_lidar_images(a, &cfg),
        Command::Train(a) => commands::train_cmd(a, &cfg),
        Command::Infer(a) => commands::infer(a, &cfg),
        Command::Reconstruct(a) => commands::reconstruct(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return CliError::Usage(e.kind().to_string()).report();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
