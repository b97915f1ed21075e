use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neuromatch::data::Protocol;
use neuromatch::model::{ContextKind, SimVariant};
use neuromatch::stimulus::BoundaryMode;
use neuromatch::trainer::LambdaPolicy;

mod commands;
mod overrides;

/// EEG/stimulus match-mismatch pipeline.
#[derive(Debug, Parser)]
#[command(name = "neuromatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a known stimulus-to-EEG mapping.
    Synth(SynthArgs),
    /// Filter, resample, clean and re-reference every EEG file of a corpus.
    Preprocess(PreprocessArgs),
    /// Cross-validated training; writes one checkpoint per fold.
    Train(TrainArgs),
    /// Accuracy and significance reports, plus optional region, ear and
    /// word-boundary analyses.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, alias = "mode", value_parser = parse::<Protocol>)]
    protocol: Option<Protocol>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    /// Pink-noise level in dB; `off` disables the noise.
    #[arg(long)]
    snr_db: Option<String>,
    /// Any generator field, e.g. `--set semantic_gain=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Any preprocessing field, e.g. `--set lowpass_hz=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

/// Options shared by training and by the retraining done in `evaluate`.
#[derive(Debug, Args)]
struct TrainingOptions {
    /// Refuse corpora of the other protocol.
    #[arg(long, value_parser = parse::<Protocol>)]
    protocol: Option<Protocol>,
    #[arg(long, value_parser = parse::<LambdaPolicy>)]
    lambda: Option<LambdaPolicy>,
    /// Similarity rule: 1 convex, 2 power, 3 blended embedding.
    #[arg(long, value_parser = parse_sim)]
    sim: Option<SimVariant>,
    #[arg(long, value_parser = parse::<ContextKind>)]
    context: Option<ContextKind>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    test_per_fold: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Swap matched and mismatched stimuli in half of the training pairs.
    #[arg(long)]
    shuffle_labels: bool,
    /// Keep dichotic trials regardless of comprehension scores.
    #[arg(long)]
    no_trial_selection: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Any experiment field, e.g. `--set train.learning_rate=0.002`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_parser = parse::<BoundaryMode>)]
    word_boundaries: Option<BoundaryMode>,
    #[command(flatten)]
    opts: TrainingOptions,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output directory of `train`; without it the main run is trained here.
    #[arg(long)]
    models: Option<PathBuf>,
    /// Required without `--models`; otherwise the stored seed is used.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_lambda)]
    lambdas: Vec<f64>,
    /// `all` or a comma-separated list of regions.
    #[arg(long)]
    regions: Option<String>,
    /// Ablation runs compared with the main run, e.g. `none,random:2`.
    #[arg(long, value_delimiter = ',', value_parser = parse::<BoundaryMode>)]
    word_boundaries: Vec<BoundaryMode>,
    /// Separate models for left- and right-ear listeners.
    #[arg(long)]
    ears: bool,
    #[command(flatten)]
    opts: TrainingOptions,
}

fn parse<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

fn parse_sim(s: &str) -> Result<SimVariant, String> {
    let i: u8 = s.parse().map_err(|_| format!("expected 1, 2 or 3, got {s:?}"))?;
    SimVariant::from_index(i).map_err(|e| e.to_string())
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(format!("λ must be a number in [0, 1], got {s:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
