//! `rulforge`: ingest vibration recordings, build model inputs, predict and
//! explain remaining useful life.

mod commands;
mod error;
mod settings;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "rulforge", version, about = "Multimodal bearing RUL prediction and explanation")]
pub struct Cli {
    /// `key = value` defaults; a `[subcommand]` table overrides top-level keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Copy CSV recordings into a new or existing store.
    Ingest(IngestArgs),
    /// Window, rasterize and extract wavelet features for every bearing.
    Featurize(FeaturizeArgs),
    /// Write normalized RUL targets for every bearing.
    Labels(LabelsArgs),
    /// Build a noisy variant of every bearing's images and features.
    Noise(NoiseArgs),
    /// Predict RUL for every window of one bearing.
    Predict(PredictArgs),
    /// Relevance maps for one window.
    Explain(ExplainArgs),
    /// MAE and MSE of predictions against labels.
    Evaluate(EvaluateArgs),
    /// Inspect or create model graphs.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// A CSV file, a directory of CSV files (one bearing each) or a directory
    /// of bearing directories (CSV chunks concatenated in numeric order).
    #[arg(long)]
    pub input: PathBuf,
    /// Channel names, one per leading CSV column.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<String>>,
    /// Zero-based CSV columns to read (default: the first N).
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<usize>>,
    /// Sampling rate in Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Bearing name when `--input` is a single file.
    #[arg(long)]
    pub bearing: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Samples per window.
    #[arg(long)]
    pub window: Option<usize>,
    /// Stride between windows (default: the window length).
    #[arg(long)]
    pub hop: Option<usize>,
    /// Operating (shaft) frequency in Hz; the wavelet band is [fo/3, 3 fo].
    #[arg(long)]
    pub fo: Option<f64>,
    #[arg(long)]
    pub scales: Option<usize>,
    /// Morlet center frequency.
    #[arg(long)]
    pub fc: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Channel to window (default: the first).
    #[arg(long)]
    pub channel: Option<String>,
    /// Amplitude per pixel row.
    #[arg(long)]
    pub y_res: Option<f64>,
    /// Feature rows per sample.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Reuse min/max from a JSON file instead of fitting on the store.
    #[arg(long)]
    pub norm: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelModeArg {
    Linear,
    Piecewise,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<LabelModeArg>,
    /// Fraction of life spent at full health (piecewise only).
    #[arg(long)]
    pub knee: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseKindArg {
    Uniform,
    Gaussian,
    #[value(name = "salt_pepper", alias = "salt-pepper")]
    SaltPepper,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_enum)]
    pub kind: NoiseKindArg,
    #[arg(long, allow_hyphen_values = true)]
    pub low: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub high: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub p_salt: Option<f64>,
    #[arg(long)]
    pub p_pepper: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelInputArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Bearing to use (default: the first in the store).
    #[arg(long)]
    pub bearing: Option<String>,
    /// Read a noisy variant (`uniform`, `gaussian`, `salt_pepper`).
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub input: ModelInputArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpModeArg {
    #[value(name = "paper_literal", alias = "paper-literal")]
    PaperLiteral,
    Conserving,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: ModelInputArgs,
    /// Window index to explain.
    #[arg(long)]
    pub sample: usize,
    #[arg(long, value_enum)]
    pub mode: Option<LrpModeArg>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// CSV with `window_index` and a `rul` (or `label`) column.
    #[arg(long)]
    pub pred: PathBuf,
    /// CSV with `window_index` and a `label` (or `rul`) column.
    #[arg(long)]
    pub labels: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ModelCommand {
    /// Print every node with its output shape and parameters.
    Describe {
        #[arg(long)]
        graph: PathBuf,
    },
    /// Build a graph and draw untrained weights.
    Init(ModelInitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitArg {
    Uniform,
    #[value(name = "he_uniform", alias = "he-uniform")]
    HeUniform,
    Zeros,
}

#[derive(Debug, Args)]
pub struct ModelInitArgs {
    /// Full model config as JSON (defaults for missing fields).
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_graph: PathBuf,
    #[arg(long)]
    pub out_weights: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = error::report(&e);
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::FAILURE
        }
    }
}
