//! The `signnet` command line: corpus generation, training, pose generation,
//! back-translation reports, the loss-weight grid and SVG rendering.

mod commands;
mod config;
mod render;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::SignError;
use crate::losses::{NegativeMode, ProbLoss};
use crate::nn::ModelConfig;
use crate::train::{TrainConfig, TripletSpace};

pub use config::resolve;
pub use render::{render_frame_svg, render_svgs};
pub use report::{EvalReport, EvalRow};

impl Cli {
    /// Parses an argument list (program name first). Help, version and
    /// usage errors come back as rendered text.
    pub fn try_parse_args<I, T>(args: I) -> Result<Cli, String>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        Cli::try_parse_from(args).map_err(|e| e.to_string())
    }
}

/// Bad flags or config; exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "signnet", version, about = "Text-to-pose sign generation and back-translation evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic corpus (train/ and dev/ splits).
    GenCorpus(GenCorpusArgs),
    /// Train a text/gloss → pose generator.
    TrainT2p(TrainT2pArgs),
    /// Train a pose → text back-translator.
    TrainP2t(TrainP2tArgs),
    /// Generate pose files from input lines.
    Generate(GenerateArgs),
    /// Back-translate pose files and score them with BLEU.
    Backtranslate(BacktranslateArgs),
    /// Sweep (λa, λb) cells over the G2P and T2P arms.
    Grid(GridArgs),
    /// Render a pose file as SVG stick figures.
    Render(RenderArgs),
}

/// Path of a TOML file providing defaults for any flag.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigFlag {
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct GenCorpusArgs {
    /// Output directory; receives train/ and dev/.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training samples (default 50).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Dev samples (default 10).
    #[arg(long)]
    pub dev_samples: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub confusable_pairs: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub motif_len_min: Option<usize>,
    #[arg(long)]
    pub motif_len_max: Option<usize>,
    #[arg(long)]
    pub sentence_len_min: Option<usize>,
    #[arg(long)]
    pub sentence_len_max: Option<usize>,
    /// Pose file encoding: text or binary.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[serde(skip)]
    #[command(flatten)]
    pub config: ConfigFlag,
}

/// Transformer dimensions.
#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct ModelFlags {
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

impl ModelFlags {
    /// Applies the set flags; `embed_dim` alone also rescales `ff_dim` to 4×.
    pub fn apply(&self, mut c: ModelConfig) -> ModelConfig {
        if let Some(d) = self.embed_dim {
            c.embed_dim = d;
            c.ff_dim = 4 * d;
        }
        c.n_heads = self.heads.unwrap_or(c.n_heads);
        c.n_encoder_layers = self.encoder_layers.unwrap_or(c.n_encoder_layers);
        c.n_decoder_layers = self.decoder_layers.unwrap_or(c.n_decoder_layers);
        c.ff_dim = self.ff_dim.unwrap_or(c.ff_dim);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.max_seq_len = self.max_seq_len.unwrap_or(c.max_seq_len);
        c
    }
}

/// Optimisation and loss settings.
#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_a: Option<f64>,
    #[arg(long)]
    pub lambda_b: Option<f64>,
    #[arg(long)]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub lambda_eos: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// uniform or hardest.
    #[arg(long)]
    pub negative_mode: Option<String>,
    /// pose or latent.
    #[arg(long)]
    pub triplet_space: Option<String>,
    /// one_minus_prob or neg_log.
    #[arg(long)]
    pub prob_loss: Option<String>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop after this many evaluations without improvement.
    #[arg(long)]
    pub early_stop: Option<usize>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Stop once the epoch's mean training MSE is below this.
    #[arg(long)]
    pub target_mse: Option<f64>,
    #[arg(long)]
    pub max_frames_ratio: Option<f64>,
    #[arg(long)]
    pub scheduler_factor: Option<f64>,
    #[arg(long)]
    pub scheduler_patience: Option<usize>,
    #[arg(long)]
    pub min_lr: Option<f64>,
}

fn parse_name<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_owned()))
        .map_err(|_| UsageError(format!("--{flag}: unrecognised value `{value}`")).into())
}

impl TrainFlags {
    pub fn apply(&self, mut c: TrainConfig, seed: u64) -> anyhow::Result<TrainConfig> {
        c.seed = seed;
        c.max_epochs = self.epochs.unwrap_or(c.max_epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = self.lr.unwrap_or(c.learning_rate);
        c.weights.lambda_a = self.lambda_a.unwrap_or(c.weights.lambda_a);
        c.weights.lambda_b = self.lambda_b.unwrap_or(c.weights.lambda_b);
        c.weights.lambda_c = self.lambda_c.unwrap_or(c.weights.lambda_c);
        c.weights.lambda_d = self.lambda_d.unwrap_or(c.weights.lambda_d);
        c.lambda_eos = self.lambda_eos.unwrap_or(c.lambda_eos);
        c.margin = self.margin.unwrap_or(c.margin);
        if let Some(v) = &self.negative_mode {
            c.negative_mode = parse_name::<NegativeMode>("negative-mode", v)?;
        }
        if let Some(v) = &self.triplet_space {
            c.triplet_space = parse_name::<TripletSpace>("triplet-space", v)?;
        }
        if let Some(v) = &self.prob_loss {
            c.prob_loss = parse_name::<ProbLoss>("prob-loss", v)?;
        }
        c.eval_every = self.eval_every.unwrap_or(c.eval_every);
        if self.early_stop.is_some() {
            c.early_stop_patience = self.early_stop;
        }
        if let Some(g) = self.grad_clip {
            c.grad_clip = (g > 0.0).then_some(g);
        }
        if self.target_mse.is_some() {
            c.target_train_mse = self.target_mse;
        }
        c.max_frames_ratio = self.max_frames_ratio.unwrap_or(c.max_frames_ratio);
        c.scheduler.factor = self.scheduler_factor.unwrap_or(c.scheduler.factor);
        c.scheduler.patience = self.scheduler_patience.unwrap_or(c.scheduler.patience);
        c.scheduler.min_lr = self.min_lr.unwrap_or(c.scheduler.min_lr);
        c.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct TrainT2pArgs {
    /// Training corpus directory (or manifest).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Dev corpus; defaults to the training corpus.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON-lines training log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Source stream: gloss (G2P) or text (T2P).
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[serde(skip)]
    #[command(flatten)]
    pub config: ConfigFlag,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct TrainP2tArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[serde(skip)]
    #[command(flatten)]
    pub config: ConfigFlag,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct GenerateArgs {
    /// Text-to-pose checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// One input per line: `id<TAB>tokens` or just tokens.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frame cap per sequence (default: the model's max_seq_len).
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[serde(skip)]
    #[command(flatten)]
    pub config: ConfigFlag,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct BacktranslateArgs {
    /// Directory of `<id>.pose` files.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Pose-to-text checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus manifest/directory or a two-column `id<TAB>sentence` file.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_words: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[serde(skip)]
    #[command(flatten)]
    pub config: ConfigFlag,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct GridArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Fixed pose-to-text checkpoint used for scoring.
    #[arg(long)]
    pub p2t: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for one training log per cell.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Comma-separated arms (g2p,t2p).
    #[arg(long)]
    pub arms: Option<String>,
    /// Comma-separated `a:b` weight cells.
    #[arg(long)]
    pub cells: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[serde(skip)]
    #[command(flatten)]
    pub config: ConfigFlag,
}

#[derive(Args, Serialize, Deserialize, Debug, Clone, Default)]
#[serde(rename_all = "kebab-case")]
pub struct RenderArgs {
    #[arg(long)]
    pub pose: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Render every `stride`-th frame (default 1).
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[serde(skip)]
    #[command(flatten)]
    pub config: ConfigFlag,
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<SignError>() {
        Some(SignError::Divergence { .. }) => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Executes a parsed command.
pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(&resolve(&a, a.config.config.as_deref(), "gen-corpus")?),
        Command::TrainT2p(a) => commands::train_t2p(&resolve(&a, a.config.config.as_deref(), "train-t2p")?),
        Command::TrainP2t(a) => commands::train_p2t(&resolve(&a, a.config.config.as_deref(), "train-p2t")?),
        Command::Generate(a) => commands::generate(&resolve(&a, a.config.config.as_deref(), "generate")?),
        Command::Backtranslate(a) => {
            commands::backtranslate(&resolve(&a, a.config.config.as_deref(), "backtranslate")?)
        }
        Command::Grid(a) => commands::grid(&resolve(&a, a.config.config.as_deref(), "grid")?),
        Command::Render(a) => commands::render(&resolve(&a, a.config.config.as_deref(), "render")?),
    }
}

/// Full entry point: parses `args`, runs the command and prints any error as
/// one `error: …` line on stderr.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("error: {line}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests;
