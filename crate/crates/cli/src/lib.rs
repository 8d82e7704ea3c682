//! Command-line front end for `bbmlab`: configuration, orchestration and
//! the verification suite shared with the acceptance tests.

pub mod checks;
pub mod cli;
pub mod commands;
pub mod config;

use std::io::Write;

use anyhow::Result;

use cli::{Cli, Command};
use commands::Emitter;
use config::ExperimentConfig;

/// Exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILED: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const POPULATION_CAP: u8 = 3;
}

/// Resolves flags over the config file over defaults.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let file = match &cli.common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cli.common.as_config().over(&file).with_env_seed()?)
}

/// Runs a parsed command line against `out`; `Ok(false)` means a
/// verification failed.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    let cfg = resolve(cli)?;
    let mut em = Emitter::new(cli.command.name(), &cfg, cli.common.timing, out);
    match &cli.command {
        Command::Simulate { dump } => commands::simulate(&cfg, dump.as_deref(), &mut em)?,
        Command::Tail { table } => commands::tail(&cfg, table.as_deref(), &mut em)?,
        Command::Curve => commands::curve(&cfg, &mut em)?,
        Command::Cstar => commands::cstar(&cfg, &mut em)?,
        Command::Deviation => commands::deviation(&cfg, &mut em)?,
        Command::Diagnose { table } => commands::diagnose(&cfg, table.as_deref(), &mut em)?,
        Command::Verify => return commands::verify(&cfg, &mut em),
    }
    Ok(true)
}

/// Exit status for an error escaping [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<config::ConfigError>().is_some() {
        return exit::CONFIG;
    }
    match err.downcast_ref::<bbmlab::Error>() {
        Some(bbmlab::Error::PopulationCap { .. }) => exit::POPULATION_CAP,
        Some(
            bbmlab::Error::Domain(_)
            | bbmlab::Error::Infeasible { .. }
            | bbmlab::Error::Coverage(_)
            | bbmlab::Error::EllMismatch { .. }
            | bbmlab::Error::InsufficientReach { .. },
        ) => exit::CONFIG,
        _ => exit::FAILED,
    }
}
