//! `bnslim`: sparsity training, pruning, fine-tuning and the report tables.
//!
//! Exit codes: 0 success, 1 invalid input, 2 failure while running.
//! `BNSLIM_THREADS` fixes the worker thread count.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bnslim_cli::config;
use bnslim_cli::failure::{invalid, Failure};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bnslim", version, about = "Batch-norm scale channel pruning pipeline")]
struct Cli {
    /// Run configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic shapes dataset (and optionally a matching model description).
    GenData(GenDataArgs),
    /// Train a model from a description with no sparsity penalty by default.
    Train(TrainArgs),
    /// Train with the L1 penalty on batch-norm scales (default 1e-4).
    SparseTrain(TrainArgs),
    /// Prune a trained model and report the size change.
    Prune(PruneArgs),
    /// Retrain a pruned model without the penalty.
    Finetune(FinetuneArgs),
    /// Accuracy and box mAP of a model on one split.
    Eval(EvalArgs),
    /// Size, compression, latency and accuracy of several models.
    Bench(BenchArgs),
    /// Augmentation ablation table.
    Ablate(AblateArgs),
    /// Write each augmentation method applied to each input image.
    AugmentPreview(PreviewArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 600)]
    test: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 12)]
    classes: usize,
    /// Also write the reference CNN description for this data here.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

/// Training flags shared by every training subcommand.
#[derive(Debug, Args, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    /// L1 coefficient on batch-norm scales.
    #[arg(long)]
    l1: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Multiply the rate by GAMMA every STEP epochs: `STEP,GAMMA`.
    #[arg(long, value_name = "STEP,GAMMA")]
    step_decay: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Model description (TOML).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset root with `train/` and `test/`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output file stem.
    #[arg(long, default_value = "model")]
    name: String,
    /// Augmentation methods, comma separated.
    #[arg(long, value_delimiter = ',')]
    augment: Option<Vec<String>>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    input: PathBuf,
    /// `normal` or `regular`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output file stem; defaults to `<input>-<method>-<ratio>`.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output file stem; defaults to `<input>-ft`.
    #[arg(long)]
    name: Option<String>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Reference model for the compression column; listed first.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Further models, reported in the given order.
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Dataset root; adds accuracy and mAP on its test split.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Methods to ablate, comma separated; all five when absent.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct PreviewArgs {
    /// PPM images.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Methods to preview, comma separated; all five when absent.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BNSLIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("BNSLIM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let cfg = match &cli.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a, &cfg, false),
        Command::SparseTrain(a) => commands::train(a, &cfg, true),
        Command::Prune(a) => commands::prune(a, &cfg),
        Command::Finetune(a) => commands::finetune(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Bench(a) => commands::bench(a, &cfg),
        Command::Ablate(a) => commands::ablate(a, &cfg),
        Command::AugmentPreview(a) => commands::augment_preview(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bnslim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
