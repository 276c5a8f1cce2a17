use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ie_core::mine::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "ie", version, about = "Information-emergence estimation for sequence models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Common {
    /// JSON object of settings for the subcommand; flags given on the command line win.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: IE_WORKERS, else available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reuse finished cells from a previous run in the same --out directory.
    #[arg(long, global = true)]
    #[serde(default)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus.
    Synth(SynthArgs),
    /// Run the toy transformer over a corpus and write macro/micro stores.
    Extract(ExtractArgs),
    /// Estimate the MI matrix of one store.
    Mi(MiArgs),
    /// Full pipeline: macro and micro MI, E(l) and Ê(t).
    Ie(IeArgs),
    /// Exact parity-dynamics table.
    Oracle(OracleArgs),
    /// Check a REPR1 store against its invariants.
    Validate(StoreArgs),
    /// Print a REPR1 header summary.
    Describe(StoreArgs),
    /// Per-shot report or source comparison from finished runs.
    Report(ReportArgs),
    /// Score generated entities against a domain.
    Score(ScoreArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Extract(_) => "extract",
            Command::Mi(_) => "mi",
            Command::Ie(_) => "ie",
            Command::Oracle(_) => "oracle",
            Command::Validate(_) => "validate",
            Command::Describe(_) => "describe",
            Command::Report(_) => "report",
            Command::Score(_) => "score",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// country, animal, color, arithmetic or natural.
    #[arg(long)]
    pub domain: String,
    #[arg(long)]
    pub shots: Option<usize>,
    /// Ablation variant: candidate, fusion1, fusion2, space, prefix.
    #[arg(long)]
    pub variant: Option<String>,
    /// Pattern: asia, europe, size, alphabet.
    #[arg(long)]
    pub pattern: Option<String>,
    /// Arithmetic task, e.g. 1digit_add or 2digit_div.
    #[arg(long)]
    pub task: Option<String>,
    /// Number of arithmetic prompts.
    #[arg(long)]
    pub count: Option<usize>,
    /// Plain-text stream for natural sentences.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// sentence_start or sentence_end.
    #[arg(long)]
    pub rule: Option<String>,
    /// Tokens per natural sequence.
    #[arg(long = "T")]
    pub tokens: Option<usize>,
    /// Number of natural sequences.
    #[arg(long)]
    pub sequences: Option<usize>,
    /// Entity catalog JSON replacing the built-in lists.
    #[arg(long)]
    pub entities: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Vocabulary JSON; built from the corpus if absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Saved weights; random weights from --seed if absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// all, first_entity, or a comma-separated position list.
    #[arg(long, default_value = "first_entity")]
    pub micro: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// full (10k epochs, 1e-4 → 1e-8) or desk (150 epochs, 5e-3 → 5e-5).
    #[arg(long, default_value = "full")]
    pub preset: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Narrowest hidden layer of the critic.
    #[arg(long)]
    pub min_width: Option<usize>,
}

impl TrainArgs {
    pub fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match self.preset.as_str() {
            "full" => TrainConfig::default(),
            "desk" => TrainConfig::desk(),
            other => anyhow::bail!("unknown preset {other:?} (full or desk)"),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr_start {
            cfg.lr_start = v;
        }
        if let Some(v) = self.lr_end {
            cfg.lr_end = v;
        }
        cfg.batch_size = self.batch_size.or(cfg.batch_size);
        cfg.early_stop_patience = self.patience.or(cfg.early_stop_patience);
        if let Some(v) = self.min_width {
            cfg.critic.min_width = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MiArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Token range `a..b` (half-open).
    #[arg(long)]
    pub tokens: Option<String>,
    /// Layer-pair range `a..b` (half-open).
    #[arg(long)]
    pub layers: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IeArgs {
    #[arg(long = "macro")]
    pub macro_store: PathBuf,
    #[arg(long = "micro")]
    pub micro_store: PathBuf,
    /// first_entity or position_mean.
    #[arg(long)]
    pub protocol: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub tokens: Option<String>,
    #[arg(long)]
    pub layers: Option<String>,
    /// Bootstrap resamples for the per-shot s.d. (0 disables).
    #[arg(long, default_value_t = 32)]
    pub bootstrap: usize,
    /// Tokens per shot; enables shot_report.csv.
    #[arg(long)]
    pub shot_length: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub gamma: Vec<f64>,
    #[arg(long = "T", default_value_t = 3)]
    pub tokens: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StoreArgs {
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// shot or compare.
    #[arg(long)]
    pub kind: String,
    /// `label=path`, where path is a run directory or an ie_profile.csv.
    #[arg(long, required = true, num_args = 1..)]
    pub profile: Vec<String>,
    #[arg(long)]
    pub shot_length: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    /// One generated entity per line.
    #[arg(long)]
    pub generations: PathBuf,
    /// country, animal or color.
    #[arg(long)]
    pub domain: String,
    /// The prompt the generations continue, e.g. "France, Mexico,".
    #[arg(long, default_value = "")]
    pub context: String,
}

/// Parses `a..b` into a half-open range.
pub fn parse_range(s: Option<&str>) -> anyhow::Result<Option<(usize, usize)>> {
    let Some(s) = s else { return Ok(None) };
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow::anyhow!("range {s:?} must look like a..b"))?;
    let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
    anyhow::ensure!(a < b, "range {s:?} is empty");
    Ok(Some((a, b)))
}
