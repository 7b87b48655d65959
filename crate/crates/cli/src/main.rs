//! Command-line front end for the dishwatch pipeline.
//!
//! One binary, one config file, one seed: `finetune-seg` fits the
//! segmentation backend, `forge` manufactures balanced datasets,
//! `preprocess` strips backgrounds, `train` fine-tunes the classifier head,
//! `eval` produces the comparison tables and loss plots, and `profile`
//! writes the complexity table. `synth` and `init-backbone` bootstrap a
//! self-contained demo workspace.
//!
//! Exit codes: 0 success, 1 internal error, 2 user/config error.

mod commands;
mod config;
mod logs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "dishwatch",
    version,
    about = "Weather-condition detection pipeline for satellite dish antennas"
)]
struct Cli {
    /// Pipeline configuration file (TOML). Defaults apply when omitted;
    /// flags always win over the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Validate the configuration and print the execution plan without
    /// writing anything.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker parallelism for data generation and preprocessing
    /// (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output root override.
    #[arg(long, global = true)]
    output_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic demo workspace: cutouts, backgrounds and annotated
    /// dish photographs.
    Synth(SynthArgs),
    /// Generate (or locate) the built-in pre-trained backbone weights in the
    /// weights cache.
    InitBackbone,
    /// Fine-tune the segmentation backend on annotated dish photographs.
    FinetuneSeg(FinetuneSegArgs),
    /// Forge the balanced train and test datasets from cutout/background
    /// pools. Re-running with the same seed reproduces the data byte for
    /// byte and says so.
    Forge,
    /// Run every forged image through the mask remover.
    Preprocess(PreprocessArgs),
    /// Train the classifier head on the preprocessed train split.
    Train(TrainArgs),
    /// Evaluate the trained model and emit comparison tables and plots.
    Eval(EvalArgs),
    /// Emit the computational-complexity table.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory to create the sample tree in.
    #[arg(long)]
    out: PathBuf,
    /// initial (snow/normal) or extended (snow/wet/normal).
    #[arg(long, default_value = "extended")]
    scenario: String,
    /// Cutouts per dish condition.
    #[arg(long, default_value_t = 12)]
    cutouts: usize,
    /// Backgrounds per weather condition.
    #[arg(long, default_value_t = 4)]
    backgrounds: usize,
    /// Annotated dish photographs for segmentation fine-tuning.
    #[arg(long, default_value_t = 12)]
    photos: usize,
    /// Also write a ready-to-use dishwatch.toml into the directory.
    #[arg(long)]
    write_config: bool,
}

#[derive(Debug, Args)]
struct FinetuneSegArgs {
    /// Checkpoint output directory (default: <output_root>/seg).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Which forged split to preprocess.
    #[arg(long, default_value = "both", value_parser = ["train", "test", "both"])]
    split: String,
    /// Segmentation checkpoint pointer (default: <output_root>/seg/checkpoint.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Continue from the existing classifier checkpoint, extending the
    /// epoch numbering.
    #[arg(long)]
    resume: bool,
    /// Print the backbone hash delta after training.
    #[arg(long)]
    freeze_verify: bool,
    /// Epoch count override.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Classifier checkpoint (default: <output_root>/model/classifier.dwc).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// External loss-curve CSV imports (model_id,C,nl,epoch,raw_loss).
    #[arg(long = "import-losses")]
    import_losses: Vec<PathBuf>,
    /// External prediction imports (line-delimited JSON records).
    #[arg(long = "import-predictions")]
    import_predictions: Vec<PathBuf>,
    /// Also run the seeded domain-gap diagnostic (MMD of masked vs unmasked
    /// imagery against the weather sources).
    #[arg(long)]
    mmd: bool,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Square input size in pixels.
    #[arg(long, default_value_t = 640)]
    input_size: u32,
    /// Batch size the memory figures assume.
    #[arg(long, default_value_t = 16)]
    batch_size: u32,
    /// Additional component costs to merge into the table
    /// (CSV: model,gflops,memory_gb,input_px,batch_size).
    #[arg(long = "import-costs")]
    import_costs: Vec<PathBuf>,
    /// Profile extra architectures from JSON layer descriptions.
    #[arg(long = "model-desc")]
    model_descs: Vec<PathBuf>,
}

/// Errors carry the process exit code: 2 for user/config problems, 1 for
/// everything unexpected.
pub struct CliError {
    code: u8,
    source: anyhow::Error,
}

pub fn user_error(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 2,
        source: e.into(),
    }
}

pub fn internal_error(e: impl Into<anyhow::Error>) -> CliError {
    CliError {
        code: 1,
        source: e.into(),
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.source);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(user_error)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(root) = &cli.output_root {
        config.output_root = root.clone();
    }
    if let Some(jobs) = cli.jobs {
        if jobs > 0 {
            // preprocess/training data loading use the global pool
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global();
        }
    }
    let jobs = cli.jobs.unwrap_or(0);

    match cli.command {
        Command::Synth(args) => commands::synth(&config, &args, cli.dry_run),
        Command::InitBackbone => commands::init_backbone(&config, cli.dry_run),
        Command::FinetuneSeg(args) => commands::finetune_seg(&config, &args, cli.dry_run),
        Command::Forge => commands::forge(&config, jobs, cli.dry_run),
        Command::Preprocess(args) => commands::preprocess(&config, &args, cli.dry_run),
        Command::Train(args) => commands::train(&config, &args, cli.dry_run),
        Command::Eval(args) => commands::eval(&config, &args, cli.dry_run),
        Command::Profile(args) => commands::profile(&config, &args, cli.dry_run),
    }
}
