//! `gnireg`: noise-injection experiments from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure or divergence, 2 usage or
//! configuration error.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gnireg::diagnostics::MaskOrientation;
use gnireg::network::Activation;
use gnireg::noise::NoiseMode;
use gnireg::objective::LossKind;
use gnireg::trainer::TrainMode;

#[derive(Parser, Debug)]
#[command(
    name = "gnireg",
    version,
    about = "Gaussian noise injection experiments"
)]
pub struct Cli {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config and GNI_OUT_DIR.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub plot: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a network; writes metrics.csv and checkpoint.json.
    Train(TrainArgs),
    /// Regulariser versus Monte-Carlo remainder over inits and noise levels.
    Dominance(DominanceArgs),
    /// Fourier spectrum of a 1-D learned function over training.
    Spectrum(SpectrumArgs),
    /// Hutchinson estimate of the parameter-Hessian trace.
    Hesstrace(HessArgs),
    /// Masked-weight norms of square ReLU layers.
    Layerstats(LayerstatsArgs),
    /// Reliability diagram, ECE and predictive entropy.
    Calibrate(CalibrateArgs),
    /// Accuracy under input noise.
    Sensitivity(SensitivityArgs),
    /// First-order margin bounds and empirical flip distances.
    Margin(MarginArgs),
    /// Discrete Sobolev-Fourier identity on a sum of tones.
    Parseval(ParsevalArgs),
}

/// Training overrides shared by every command that may train.
#[derive(Args, Debug, Default)]
pub struct TrainOverrides {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Noise variance sigma^2.
    #[arg(long)]
    pub variance: Option<f64>,
    #[arg(long, value_parser = parse_noise_mode)]
    pub noise_mode: Option<NoiseMode>,
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Use this network instead of training one from the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV dataset (last column is the target) replacing the configured data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct DominanceArgs {
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long)]
    pub inits: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Checkpoints to analyse, in order; trains from the config when absent.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Clip exported amplitudes to [0, 1].
    #[arg(long)]
    pub clip: bool,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Args, Debug)]
pub struct HessArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct LayerstatsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Zero rows (output units) or columns (input units) of inactive units.
    #[arg(long, value_parser = parse_orientation)]
    pub orientation: Option<MaskOrientation>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MarginArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Random directions per point for the empirical flip distance; 0 skips it.
    #[arg(long)]
    pub directions: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ParsevalArgs {
    #[arg(long, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub amplitudes: Option<Vec<f64>>,
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Use the finite-difference derivative.
    #[arg(long)]
    pub fd: bool,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: gnireg::Error| e.to_string())
}

fn parse_noise_mode(s: &str) -> Result<NoiseMode, String> {
    s.parse().map_err(|e: gnireg::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s {
        "mse" => Ok(LossKind::Mse),
        "ce" | "cross_entropy" => Ok(LossKind::CrossEntropy),
        other => Err(format!(
            "unknown loss `{other}` (expected mse or cross_entropy)"
        )),
    }
}

fn parse_orientation(s: &str) -> Result<MaskOrientation, String> {
    match s {
        "rows" => Ok(MaskOrientation::Rows),
        "columns" => Ok(MaskOrientation::Columns),
        other => Err(format!(
            "unknown orientation `{other}` (expected rows or columns)"
        )),
    }
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown activation `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::message(&e));
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
