//! Experiment front end for `pmp-core`: one subcommand per workflow, CSV
//! tables for data and a `run.json` sidecar holding the resolved settings.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;

use clap::Parser;

use config::{Cli, Command, GradcheckConfig, OptimizeSettings, PropagateConfig, TrajectoriesConfig};
pub use error::{CliError, Result};

pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    let go = || match &cli.command {
        Command::Propagate(a) => commands::cmd_propagate(&PropagateConfig::resolve(a)?),
        Command::Trajectories(a) => commands::cmd_trajectories(&TrajectoriesConfig::resolve(a)?),
        Command::Optimize(a) => commands::cmd_optimize(&OptimizeSettings::resolve(a)?),
        Command::Gradcheck(a) => commands::cmd_gradcheck(&GradcheckConfig::resolve(a)?),
    };
    match cli.command.threads()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?
            .install(go),
        None => go(),
    }
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
