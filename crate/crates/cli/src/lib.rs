//! Command-line front end: data generation, training, evaluation, single
//! episode simulation and training reports.

pub mod commands;
pub mod config;
mod error;
pub mod runtime;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "igft",
    version,
    about = "Train and evaluate clinical interview policies with information-gain rewards"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic cases.
    Gen(commands::gen::GenArgs),
    /// Train a policy; artifacts go to a new run directory.
    Train(commands::train::TrainArgs),
    /// Evaluate a policy over the configured seeds.
    Eval(commands::eval::EvalArgs),
    /// Play a single episode and print the transcript.
    Simulate(commands::simulate::SimulateArgs),
    /// Plot and tabulate a metrics file.
    Report(commands::report::ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Use the remote assessor, embeddings, patient and judge.
    #[arg(long)]
    pub remote: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::defaults()?,
        };
        if self.remote {
            config.remote.enabled = true;
            let source_name = self.config.as_ref().map_or("<defaults>".into(), |p| p.display().to_string());
            config.validate().map_err(|problems| config::ConfigError { source_name, problems })?;
        }
        Ok(config)
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen::run(&a, out),
        Command::Train(a) => commands::train::run(&a, out),
        Command::Eval(a) => commands::eval::run(&a, out),
        Command::Simulate(a) => commands::simulate::run(&a, out),
        Command::Report(a) => commands::report::run(&a, out),
    }
}
