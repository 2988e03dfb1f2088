use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod io;

#[derive(Parser)]
#[command(name = "gtlvm", version, about = "Guided temporal latent-variable model pipelines")]
struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ModelInputs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Run config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic cohort.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        patients: Option<usize>,
        /// Also write the true factor paths and bundle labels.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Per-epoch loss CSV (default: next to the checkpoint).
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score forecasts against both baselines.
    Evaluate {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        report: PathBuf,
        /// Score the held-out test split or every patient.
        #[arg(long, value_enum, default_value = "test")]
        split: commands::SplitChoice,
    },
    /// Write predictive summaries after the first k visits.
    Forecast {
        #[command(flatten)]
        inputs: ModelInputs,
        /// Visit count or fraction of each trajectory.
        #[arg(long)]
        k: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        patient: Option<String>,
    },
    /// Cluster latent trajectories with k-medoids under DTW.
    Cluster {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Concept-probability profiles of the medoids.
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        zscore: bool,
    },
    /// Nearest patients in latent space.
    Neighbors {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        k: Option<usize>,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write posterior-mean latent trajectories.
    ExportLatent {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in numerical checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate { config, out, seed, patients, truth } => {
            commands::simulate(&config, &out, seed, patients, truth.as_deref())?
        }
        Command::Train { cohort, config, out, seed, warm_start, history } => {
            commands::train(&cohort, &config, &out, seed, warm_start.as_deref(), history.as_deref())?
        }
        Command::Evaluate { inputs, report, split } => commands::evaluate(&inputs, &report, split)?,
        Command::Forecast { inputs, k, out, patient } => commands::forecast(&inputs, &k, &out, patient.as_deref())?,
        Command::Cluster { inputs, k, out, profiles, window, zscore } => {
            commands::cluster(&inputs, k, &out, profiles.as_deref(), window, zscore)?
        }
        Command::Neighbors { inputs, patient, k, out } => commands::neighbors(&inputs, &patient, k, out.as_deref())?,
        Command::ExportLatent { inputs, out } => commands::export_latent(&inputs, &out)?,
        Command::Selftest { seed } => return Ok(commands::selftest(seed)),
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
