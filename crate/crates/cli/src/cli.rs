use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "bbmlab", version, about = "Branching Brownian motion moderate-deviation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate runs and print one summary per replica.
    Simulate {
        /// Write each tree as one JSON object per line.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Direct estimate of P(M_t > m_t + x).
    Tail {
        /// CSV side table with the ratio to gamma_t(x).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Empirical tail curve of M_ell - sqrt(2) ell, written to --curve.
    Curve,
    /// Limiting constant from a tail curve.
    Cstar,
    /// Hybrid estimate of P(M_t > m_t + x) from a tail curve.
    Deviation,
    /// Conditioned diagnostics, or moment identities with --functional.
    Diagnose {
        /// CSV side table with the multiplicity histogram.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Run a check suite; exits 1 if any check fails.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Tail { .. } => "tail",
            Command::Curve => "curve",
            Command::Cstar => "cstar",
            Command::Deviation => "deviation",
            Command::Diagnose { .. } => "diagnose",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub t: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub x: Option<f64>,
    #[arg(long, global = true)]
    pub ell: Option<f64>,
    #[arg(long, global = true)]
    pub n: Option<u64>,
    /// Master seed [default: $BBMLAB_SEED, else built in].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub grid_min: Option<f64>,
    #[arg(long, global = true)]
    pub grid_max: Option<f64>,
    #[arg(long, global = true)]
    pub grid_step: Option<f64>,
    #[arg(long, global = true)]
    pub window_a: Option<f64>,
    #[arg(long, global = true)]
    pub window_b: Option<f64>,
    /// Node budget per run.
    #[arg(long, global = true)]
    pub pop_cap: Option<u64>,
    /// Check barriers on skeleton knots only (biased).
    #[arg(long, global = true)]
    pub knot_only: bool,
    /// Tail curve path (input, or output for `curve`).
    #[arg(long, global = true)]
    pub curve: Option<PathBuf>,
    /// analytic, bridge, sim, estimators, diagnostics or all.
    #[arg(long, global = true)]
    pub suite: Option<String>,
    /// constant, above:<a> or interval:<lo>:<hi>.
    #[arg(long, global = true)]
    pub functional: Option<String>,
    /// JSON-lines output file [default: stdout].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Include wall times in the output.
    #[arg(long, global = true)]
    pub timing: bool,
}

impl CommonArgs {
    /// The flag layer of the configuration.
    pub fn as_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            t: self.t,
            x: self.x,
            ell: self.ell,
            n: self.n,
            seed: self.seed,
            workers: self.workers,
            grid_min: self.grid_min,
            grid_max: self.grid_max,
            grid_step: self.grid_step,
            window_a: self.window_a,
            window_b: self.window_b,
            pop_cap: self.pop_cap,
            knot_only: self.knot_only.then_some(true),
            curve: self.curve.clone(),
            suite: self.suite.clone(),
            functional: self.functional.clone(),
        }
    }
}
