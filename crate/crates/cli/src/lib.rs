//! Command-line front-end for `vids-core`: experiment configs, CSV and
//! checkpoint formats, and the staged pipeline
//! `gen-data → pretrain → fit → predict → eval`, plus the standalone
//! `envcheck` and `prior-grid` reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use clap::{Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

pub use commands::Run;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "vids",
    version,
    about = "Predictive uncertainty under covariate shift"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run only this master seed instead of the config's seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate or split data into train.csv / test.csv.
    GenData,
    /// Pretrain the embedding and head by maximum likelihood.
    Pretrain,
    /// Train the inference network on synthetic environments.
    Fit,
    /// Write predictive means, standard deviations and variational parameters.
    Predict,
    /// Compute metrics per seed and their mean and standard error.
    Eval,
    /// Environment-coverage calculator.
    Envcheck,
    /// Prior energy grids of the two-feature logistic example.
    PriorGrid,
}

impl Command {
    pub fn stage(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Fit => "fit",
            Command::Predict => "predict",
            Command::Eval => "eval",
            Command::Envcheck => "envcheck",
            Command::PriorGrid => "prior-grid",
        }
    }
}

/// Runs a parsed command; returns text meant for stdout.
pub fn execute(cli: &Cli) -> CliResult<String> {
    let stage = cli.command.stage();
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config is required").at(stage))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e).at(stage))?;
    let run = Run::new(&text, cli.seed, cli.out.clone()).map_err(|e| e.at(stage))?;
    let mut stdout = String::new();
    let per_seed =
        |f: fn(&Run, u64) -> CliResult<()>| run.seeds.iter().try_for_each(|&s| f(&run, s));
    match cli.command {
        Command::GenData => per_seed(commands::gen_data),
        Command::Pretrain => per_seed(commands::pretrain),
        Command::Fit => per_seed(commands::fit),
        Command::Predict => per_seed(commands::predict),
        Command::Eval => commands::eval(&run),
        Command::PriorGrid => per_seed(commands::prior_grid),
        Command::Envcheck => run.seeds.iter().try_for_each(|&s| {
            stdout.push_str(&commands::envcheck(&run, s)?);
            Ok(())
        }),
    }
    .map_err(|e| e.at(stage))?;
    Ok(stdout)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let msg = e.to_string();
        let first = msg
            .lines()
            .next()
            .unwrap_or("")
            .trim_start_matches("error: ");
        CliError::new("usage", first)
    })?;
    execute(&cli)
}
