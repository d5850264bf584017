//! Command-line front end: data generation, training, evaluation and
//! explanation.
//!
//! Settings come from defaults, then the `--config` JSON file, then flags;
//! later sources win. Log verbosity follows the `MEDGRAD_LOG` environment
//! variable (`error`, `warn`, `info`, `debug`, `trace`; default `info`).

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

pub const LOG_ENV: &str = "MEDGRAD_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "medgrad",
    version,
    about = "Entropy-weighted saliency for a toy CLIP-style model"
)]
pub struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, splitting, initialization and training.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Split a dataset, train, and write a checkpoint plus a JSON-lines log.
    Train(TrainArgs),
    /// Report metrics for one split of a dataset.
    Eval(EvalArgs),
    /// Render saliency panels for one image and caption.
    Explain(ExplainArgs),
    /// Render method × caption grids for sampled dataset images.
    Compare(CompareArgs),
    /// Print a checkpoint's header and tensor table.
    InspectCheckpoint(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k_classes: Option<usize>,
    #[arg(long)]
    pub n_pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (defaults to `data.dir` from the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub caption: String,
    /// Comma-separated: medgrad-eclip, grad-eclip, grad-cam.
    #[arg(long, default_value = "medgrad-eclip,grad-eclip,grad-cam")]
    pub methods: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "medgrad-eclip,grad-eclip,grad-cam")]
    pub methods: String,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub checkpoint: PathBuf,
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = RunConfig::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::GenData(a) => commands::gen_data(cfg, &a),
        Command::Train(a) => commands::train(cfg, &a),
        Command::Eval(a) => commands::eval(cfg, &a),
        Command::Explain(a) => commands::explain(cfg, &a),
        Command::Compare(a) => commands::compare(cfg, &a),
        Command::InspectCheckpoint(a) => commands::inspect(&a),
    }
}
