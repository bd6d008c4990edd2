//! `icessm`: scan orders, synthetic data, preprocessing, training and
//! evaluation from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icessm::hsa::Fusion;
use icessm::model::Head;
use icessm::sfc::{Dims3, ScanKind};
use icessm::wavelet::Basis;
use icessm::Error;

#[derive(Parser, Debug)]
#[command(
    name = "icessm",
    version,
    about = "Hilbert-scan state-space sea-ice forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a scan order and its routes as a golden file.
    Scan(ScanArgs),
    /// Score the locality of every scan kind on one cuboid.
    BenchLocality(BenchArgs),
    /// Generate a synthetic concentration series.
    Synth(SynthArgs),
    /// Fill gaps, detect land and interpolate missing values.
    Preprocess(PreprocessArgs),
    /// Train a forecaster on a preprocessed grid.
    Train(TrainArgs),
    /// Forecast the window after one input window.
    Predict(PredictArgs),
    /// Score forecasts against observations.
    Eval(EvalArgs),
    /// Chain forecasts beyond one output window.
    Recurse(RecurseArgs),
}

#[derive(Args, Debug)]
struct ScanArgs {
    #[arg(long, default_value = "hilbert-t")]
    kind: ScanKind,
    /// Cuboid size as T,H,W.
    #[arg(long)]
    dims: Dims3,
    #[arg(long, default_value_t = 1)]
    routes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "8,8,8")]
    dims: Dims3,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Series size as T,H,W.
    #[arg(long, default_value = "120,16,16")]
    dims: Dims3,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    blobs: usize,
    /// Blob speed in cells per day.
    #[arg(long, default_value_t = 0.3)]
    drift: f64,
    #[arg(long, default_value_t = 0)]
    start_day: i64,
    /// Also degrade the series the way raw retrievals look.
    #[arg(long)]
    raw: bool,
    /// Fraction of ocean values dropped with --raw.
    #[arg(long, default_value_t = 0.05)]
    missing: f64,
    /// Interior dates dropped with --raw.
    #[arg(long, default_value_t = 3)]
    gap_days: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Input grid container.
    #[arg(long)]
    input: PathBuf,
    /// Fraction of missing days above which a cell is land.
    #[arg(long, default_value_t = icessm::data::LAND_THRESHOLD)]
    land_threshold: f64,
    /// Fail instead of interpolating values still missing after gap filling.
    #[arg(long)]
    no_idw: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value = "hilbert-t")]
    kind: ScanKind,
    #[arg(long, default_value_t = 2)]
    routes: usize,
    /// Number of frequency-enhanced state-space blocks.
    #[arg(long, default_value_t = 3)]
    fssm: usize,
    /// Weight of the gradient loss.
    #[arg(long, default_value_t = 0.1)]
    lambda: f32,
    #[arg(long, default_value = "det")]
    head: Head,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    state_size: usize,
    #[arg(long, default_value = "haar")]
    basis: Basis,
    #[arg(long, default_value = "hsa")]
    fusion: Fusion,
    #[arg(long, default_value_t = 14)]
    in_len: usize,
    #[arg(long, default_value_t = 14)]
    out_len: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Preprocessed grid container.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    /// Fraction of windows used for training, in date order.
    #[arg(long, default_value_t = 0.7)]
    train_frac: f64,
    /// Fraction of windows used for validation, after the training part.
    #[arg(long, default_value_t = 0.15)]
    val_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Index of the first input frame; defaults to the last full window.
    #[arg(long)]
    at: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RecurseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    at: Option<usize>,
    #[arg(long, default_value_t = 2)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory written by `train`; scores its forecasts on --data.
    #[arg(long, requires = "data", conflicts_with_all = ["forecast", "truth"])]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// A forecast grid to score against --truth instead of a model.
    #[arg(long, requires = "truth")]
    forecast: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Concentration above which a cell counts as ice.
    #[arg(long, default_value_t = icessm::metrics::ICE_THRESHOLD)]
    threshold: f32,
    /// Area of one cell for the ice extent.
    #[arg(long, default_value_t = 1.0)]
    cell_area: f64,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ICESSM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("ICESSM_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Scan(a) => commands::scan(a),
        Command::BenchLocality(a) => commands::bench_locality(a),
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::Recurse(a) => commands::recurse(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
