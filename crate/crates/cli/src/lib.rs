//! Command-line driver for the `powerreg` library.

pub mod commands;
pub mod manifest;
pub mod target;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{run, Status};

#[derive(Debug, Parser)]
#[command(name = "powerreg", version, about = "Power-regularized solving, checking and training for Markov games")]
pub struct Cli {
    /// Size of the worker pool for seed and lambda fan-out.
    #[arg(long, global = true, env = "POWERREG_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// Where the game comes from.
#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// Game file in the JSON game format.
    #[arg(long)]
    pub game: Option<PathBuf>,
    /// Overcooked layout file.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Bundled environment, e.g. attack-defense or micro-cpfp.
    #[arg(long)]
    pub env: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for a power-regularizing equilibrium and verify it.
    Solve {
        #[command(flatten)]
        target: TargetArgs,
        /// One lambda for all players or a comma list with one per player.
        #[arg(long, default_value = "0")]
        lambda: String,
        /// plain-sum, discounted or hazard:<h>.
        #[arg(long, default_value = "plain-sum")]
        penalty_mode: String,
        /// mean, max or sum over co-players.
        #[arg(long, default_value = "mean")]
        aggregator: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve over a grid of lambdas and report start-state values.
    Sweep {
        #[command(flatten)]
        target: TargetArgs,
        /// `start:stop:step`, a comma list or a single value.
        #[arg(long)]
        lambdas: String,
        #[arg(long, default_value = "plain-sum")]
        penalty_mode: String,
        #[arg(long, default_value = "mean")]
        aggregator: String,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the p-adversarial game with the regularized objective.
    CheckEquivalence {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, default_value = "0.01,0.1,0.5")]
        lambdas: String,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Profile JSON; the uniform profile when omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train SBPR, PRIM or task-only learners over one or more seeds.
    Train {
        #[command(flatten)]
        target: TargetArgs,
        /// Training configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single seed; overridden by --seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma list or `a..b`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        /// learned, exhaustive or fixed-action:<a>.
        #[arg(long)]
        adversary_mode: Option<String>,
        #[arg(long)]
        normalize_adversary: Option<bool>,
        #[arg(long)]
        vf_bootstrap: Option<bool>,
        #[arg(long)]
        domain_randomization: Option<bool>,
        #[arg(long)]
        total_steps: Option<u64>,
        #[arg(long)]
        eval_every: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Power of every co-player over every player under a profile.
    PowerReport {
        #[command(flatten)]
        target: TargetArgs,
        /// Profile JSON (games) or learner file written by `train`.
        #[arg(long)]
        profile: PathBuf,
        /// rollout or vf; how simulators value the step after a deviation.
        #[arg(long, default_value = "rollout")]
        continuation: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a bundled environment as a game file or layout file.
    Export {
        #[arg(long)]
        env: String,
        #[arg(long)]
        out: PathBuf,
    },
}
