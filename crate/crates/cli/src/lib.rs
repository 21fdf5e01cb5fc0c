//! Command-line orchestration for the sensitivity-uncertainty workbench:
//! dataset generation, training, evaluation, bound verification, ablation
//! sweeps, and report aggregation. Outputs are CSV/JSON/JSONL under a
//! per-run directory; every command is deterministic given (config, seed).

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod manifest;

/// Exit-code contract: 0 = success, 1 = invariant violation, 2 = config
/// error.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Invariant(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Invariant(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Invariant(m) => write!(f, "invariant violation: {m}"),
        }
    }
}

impl From<sua_core::error::Error> for Failure {
    fn from(e: sua_core::error::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("io: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "sua", about = "Sensitivity-uncertainty alignment workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic world and dataset files.
    GenData(CommonArgs),
    /// Train a model and emit checkpoint + loss history.
    Train(CommonArgs),
    /// Compute the full metrics table for one (task, method, seed) cell.
    Eval(CommonArgs),
    /// Emit per-input scores on the test split.
    Score(CommonArgs),
    /// Calibrate a threshold and emit abstention decisions.
    Abstain(CommonArgs),
    /// Run the bound-verification harness and the K sweep.
    Verify(CommonArgs),
    /// Sweep lambda, K, and the perturbation mixture.
    Ablate(CommonArgs),
    /// Aggregate metrics files under the output directory.
    Report(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Score(_) => "score",
            Command::Abstain(_) => "abstain",
            Command::Verify(_) => "verify",
            Command::Ablate(_) => "ablate",
            Command::Report(_) => "report",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::GenData(a)
            | Command::Train(a)
            | Command::Eval(a)
            | Command::Score(a)
            | Command::Abstain(a)
            | Command::Verify(a)
            | Command::Ablate(a)
            | Command::Report(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory root.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Training method: standard, adversarial, sua_tr, sua_tr_minus_ent,
    /// sua_tr_minus_cons.
    #[arg(long)]
    pub method: Option<String>,
    /// Task family: factual, ambiguous, shifted.
    #[arg(long)]
    pub task: Option<String>,
    /// Target coverage for abstention calibration.
    #[arg(long)]
    pub coverage: Option<f64>,
    /// Fixed abstention threshold (skips calibration).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Perturbations per input.
    #[arg(long)]
    pub k: Option<usize>,
    /// Entropy weight in the score.
    #[arg(long)]
    pub lambda: Option<f64>,
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = config::RunConfig::resolve(cli.command.name(), cli.command.args())?;
    match &cli.command {
        Command::GenData(_) => commands::cmd_gen_data(&cfg),
        Command::Train(_) => commands::cmd_train(&cfg).map(|_| ()),
        Command::Eval(_) => commands::cmd_eval(&cfg).map(|_| ()),
        Command::Score(_) => commands::cmd_score(&cfg),
        Command::Abstain(_) => commands::cmd_abstain(&cfg),
        Command::Verify(_) => commands::cmd_verify(&cfg),
        Command::Ablate(_) => commands::cmd_ablate(&cfg),
        Command::Report(_) => commands::cmd_report(&cfg),
    }
}
