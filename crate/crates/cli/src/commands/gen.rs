use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use igft_core::vignette::{generate_synthetic_cases, save_cases};

use super::out_err;
use crate::{CliError, ConfigArgs};

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Number of cases.
    #[arg(short = 'n', long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output case file.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub min_entities: usize,
    #[arg(long, default_value_t = 15)]
    pub max_entities: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

pub fn run(args: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let cases =
        generate_synthetic_cases(args.count, args.seed, &config.registry(), (args.min_entities, args.max_entities))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    save_cases(&args.out, &cases)?;
    writeln!(out, "wrote {} cases to {}", cases.len(), args.out.display()).map_err(out_err)
}
