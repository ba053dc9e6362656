//! `overseg`: synthesize overlapping-letter datasets, train the U-Net,
//! evaluate it and run single-image predictions.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "overseg", version, about = "Overlapping-letter segmentation toolkit")]
struct Cli {
    /// Worker threads for generation, training and evaluation (default: all cores).
    #[arg(long, global = true, env = "OVERSEG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print per-class counts, intensity range and split pool sizes of a letter CSV.
    CorpusStats(CorpusStatsArgs),
    /// Write a procedurally drawn A–E letter corpus in the CSV layout.
    SynthCorpus(SynthCorpusArgs),
    /// Synthesize an overlap dataset (OVLS file) from one split of a corpus.
    Generate(GenerateArgs),
    /// Train the U-Net; writes the model, per-epoch checkpoints and a history CSV.
    Train(TrainArgs),
    /// Evaluate a model on a dataset; writes a JSON report, histogram CSV and panels.
    Eval(EvalArgs),
    /// Predict masks for one PGM image.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    /// Letter corpus CSV (`label,p0,...,p783`).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated class ids to keep (0 = A).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u8>>,
    /// Seed of the train/val/test split of the corpus.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// JSON settings file with optional synth/unet/train/eval sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorpusStatsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
}

#[derive(Args, Debug)]
pub struct SynthCorpusArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Glyphs drawn per class.
    #[arg(long, default_value_t = 2000)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output OVLS path.
    #[arg(long)]
    pub out: PathBuf,
    /// Glyph pool to draw from: train, val or test.
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub count: usize,
    /// Dataset seed; sample i uses derive_seed(seed, i).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub p_single: Option<f64>,
    #[arg(long)]
    pub offset_max: Option<u32>,
    #[arg(long)]
    pub contrast_min: Option<f32>,
    #[arg(long)]
    pub contrast_max: Option<f32>,
    #[arg(long)]
    pub noise_sigma: Option<f32>,
    #[arg(long)]
    pub min_ink_pixels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training dataset (OVLS).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation dataset (OVLS).
    #[arg(long)]
    pub val: PathBuf,
    /// Epochs [default: 15].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 64].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight initialisation seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the per-epoch sample shuffle [default: 0].
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Channels of the first stage [default: 16].
    #[arg(long)]
    pub base_filters: Option<usize>,
    /// Pooling stages [default: 2].
    #[arg(long)]
    pub depth: Option<usize>,
    /// Output model path; checkpoints and history are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV path [default: <out without .unet>.history.csv].
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the resolved settings as JSON and exit without training.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset to evaluate (OVLS).
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report path; the histogram CSV is written beside it.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for panel PGMs.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
    /// Number of leading samples to render as panels.
    #[arg(long, default_value_t = 0)]
    pub render_count: usize,
    #[arg(long)]
    pub detect_threshold: Option<f32>,
    #[arg(long)]
    pub noise_threshold: Option<f32>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub render_scale: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Binary PGM (P5) of the model's input size, ink dark on light.
    #[arg(long)]
    pub image: PathBuf,
    /// Mask files are written as <prefix>_<letter>.pgm.
    #[arg(long)]
    pub out_prefix: PathBuf,
    #[arg(long)]
    pub detect_threshold: Option<f32>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::argument("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::argument(format!("cannot configure {n} threads: {e}")))?;
    }
    match cli.command {
        Command::CorpusStats(a) => commands::corpus_stats(a),
        Command::SynthCorpus(a) => commands::synth_corpus(a),
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { failure::EXIT_ARGUMENT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
