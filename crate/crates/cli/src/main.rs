//! `rsl`: dataset generation, training, rollouts, sweeps and reports.

mod commands;
mod config;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
}

impl From<rsl_core::Error> for CliError {
    fn from(e: rsl_core::Error) -> Self {
        use rsl_core::Error as E;
        match e {
            E::Config(_) | E::Shape { .. } | E::Range(_) | E::Format(_) | E::Json(_) => CliError::Config(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "rsl", version, about = "Autoregressive spherical emulators: training, rollouts and stability scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Artifact root; defaults to $RSL_RUN_ROOT, then the working directory.
    #[arg(long)]
    run_root: Option<PathBuf>,
}

impl Common {
    fn run_root(&self) -> PathBuf {
        self.run_root
            .clone()
            .or_else(|| std::env::var_os("RSL_RUN_ROOT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train one configuration.
    Train(TrainArgs),
    /// Roll out a trained run and score it.
    Rollout(RolloutArgs),
    /// Train a grid of configurations.
    Sweep(SweepArgs),
    /// Build tables and figure data from a sweep.
    Report(ReportArgs),
    /// Run the built-in invariant checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    years: Option<usize>,
    #[arg(long)]
    start_year: Option<i32>,
    /// Grid as WxH.
    #[arg(long)]
    grid: Option<String>,
    /// vars8, vars33 or custom (with --n-prognostic).
    #[arg(long)]
    vars: Option<String>,
    #[arg(long)]
    n_prognostic: Option<usize>,
    /// Slow drift added to every variable, in anomaly units per year.
    #[arg(long)]
    trend: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Autoregressive steps M of the objective.
    #[arg(long)]
    m_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// replication or free.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_train_samples: Option<usize>,
    #[arg(long)]
    max_val_samples: Option<usize>,
    /// Training years as `FIRST-LAST` or `YEAR`.
    #[arg(long)]
    train_years: Option<String>,
    #[arg(long)]
    val_years: Option<String>,
    /// Retrain even if the run is already complete.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    common: Common,
    /// Run ID under `<run-root>/runs/`.
    run_id: String,
    #[arg(long, conflicts_with = "years")]
    steps: Option<usize>,
    #[arg(long)]
    years: Option<u32>,
    /// First rollout time, e.g. 2009-01-01T00.
    #[arg(long)]
    start: Option<String>,
    /// Dataset providing the initial state and the reference statistics.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Dataset for the climatology; defaults to the reference.
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<String>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Directory for `sweep.json`; defaults to the run root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Roll out and score every trained run afterwards.
    #[arg(long)]
    rollout: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Directory containing `sweep.json`; defaults to the run root.
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Output directory; defaults to `<sweep>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset for the temporal-mean difference maps.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Also write `summary.svg`.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Skip the gradient and training checks.
    #[arg(long)]
    quick: bool,
}

pub fn require_dir(p: &Path, what: &str) -> Result<(), CliError> {
    if p.join("manifest.json").exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} is not a dataset directory", p.display())))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
        Command::Verify(a) => verify::run(a.quick),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
