//! Subcommand driver: datagen | train | bank | tune | reconstruct | eval |
//! heatmap. All outputs land under `--out` and are byte-stable for a fixed
//! seed with `--threads 1`.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use laft_core::{Error, PipelineConfig, Result};

#[derive(Debug, Parser)]
#[command(name = "laft", version, about = "Latent-feature anomaly detection pipeline")]
pub struct Cli {
    /// Pipeline configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; 1 guarantees bit-exact reruns.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest of normal training samples.
    #[arg(long)]
    pub train_manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub train_manifest: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Core-set rows written by `bank`.
    #[arg(long)]
    pub coreset: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Manifest of samples to process.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Core-set rows; required when feature editing is on.
    #[arg(long)]
    pub coreset: Option<PathBuf>,
    /// Corruption depth override (defaults to the config value).
    #[arg(long)]
    pub tau: Option<usize>,
    /// Neighbor-count override for feature editing.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic latent dataset (manifests + tensors + masks).
    Datagen,
    /// Train the denoiser on a manifest of normal samples.
    Train(TrainArgs),
    /// Build the memory bank and greedy core set from training tensors.
    Bank(TrainArgs),
    /// Select tau and K on a pseudo validation set built from training data.
    Tune(TuneArgs),
    /// Write reconstructed tensors for every sample in a manifest.
    Reconstruct {
        #[command(flatten)]
        args: InferArgs,
        /// Edit features against the core set before reconstruction.
        #[arg(long, default_value_t = false)]
        with_editing: bool,
    },
    /// Evaluate detection/localization metrics with and without editing.
    Eval(InferArgs),
    /// Export anomaly heatmaps as PGM (per-image and per-category scaling).
    Heatmap {
        #[command(flatten)]
        args: InferArgs,
        #[arg(long, default_value_t = false)]
        with_editing: bool,
    },
}

/// Parses argv and runs the chosen subcommand.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::config(format!("argument error: {e}")))?;
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    std::fs::create_dir_all(&cli.out)?;
    cfg.save(cli.out.join("effective.cfg"))?;
    let ctx = commands::Context {
        cfg,
        seed: cli.seed,
        threads: cli.threads.max(1),
        out: cli.out.clone(),
    };
    match cli.command {
        Command::Datagen => commands::datagen(&ctx),
        Command::Train(args) => commands::train(&ctx, &args),
        Command::Bank(args) => commands::bank(&ctx, &args),
        Command::Tune(args) => commands::tune(&ctx, &args),
        Command::Reconstruct { args, with_editing } => {
            commands::reconstruct(&ctx, &args, with_editing)
        }
        Command::Eval(args) => commands::eval(&ctx, &args),
        Command::Heatmap { args, with_editing } => commands::heatmap(&ctx, &args, with_editing),
    }
}

/// Maps an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Io(_) => 3,
        _ => 1,
    }
}
