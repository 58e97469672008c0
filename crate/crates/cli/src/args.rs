use std::path::PathBuf;

use antispoof_core::LossKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Parser)]
#[command(name = "antispoof", version, about = "Speech anti-spoofing countermeasure toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic bonafide/spoof corpus with protocol files.
    Synth(SynthArgs),
    /// Extract LFCC features for every protocol utterance.
    Extract(ExtractArgs),
    /// Train an embedder and keep the best-dev-minDCF checkpoint.
    Train(TrainArgs),
    /// Score utterances with a checkpoint.
    Score(ScoreArgs),
    /// EER/minDCF report with attack/codec breakdown and score histogram.
    Eval(EvalArgs),
    /// Logistic-regression score fusion.
    #[command(subcommand)]
    Fuse(FuseCommand),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub speakers: u64,
    /// Trials per speaker.
    #[arg(long, value_parser = clap::value_parser!(u64).range(4..))]
    pub utts: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChunkArg {
    /// Seeded random 10 s crop.
    Train,
    /// First 10 s.
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PartitionArg {
    Train,
    Dev,
    Eval,
}

impl From<PartitionArg> for antispoof_core::Partition {
    fn from(p: PartitionArg) -> Self {
        match p {
            PartitionArg::Train => Self::Train,
            PartitionArg::Dev => Self::Dev,
            PartitionArg::Eval => Self::Eval,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub audio_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ChunkArg::Infer)]
    pub mode: ChunkArg,
    /// Crop seed for `--mode train`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only extract this partition.
    #[arg(long, value_enum)]
    pub partition: Option<PartitionArg>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub win_ms: usize,
    #[arg(long, default_value_t = 10)]
    pub hop_ms: usize,
    #[arg(long, default_value_t = 512)]
    pub n_fft: usize,
    #[arg(long, default_value_t = 40)]
    pub n_filters: usize,
    #[arg(long, default_value_t = 40)]
    pub n_ceps: usize,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse()
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub protocol: PathBuf,
    /// Directory of train-partition feature files.
    #[arg(long)]
    pub train_features: PathBuf,
    /// Directory of dev-partition feature files.
    #[arg(long)]
    pub dev_features: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// softmax | oc-softmax | samo
    #[arg(long, default_value = "samo", value_parser = parse_loss)]
    pub loss: LossKind,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub samo_update_interval: Option<u64>,
    /// Score against the nearest attractor instead of the speaker's own.
    #[arg(long)]
    pub samo_maxscore: bool,
    /// Select checkpoints with dev attractors built from enrollment data.
    #[arg(long, requires = "enroll_protocol")]
    pub samo_enroll: bool,
    #[arg(long, requires = "samo_enroll")]
    pub enroll_protocol: Option<PathBuf>,
    /// Enrollment feature directory (default: --dev-features).
    #[arg(long, requires = "enroll_protocol")]
    pub enroll_features: Option<PathBuf>,
    /// Class-weighted loss (0.9 bonafide / 0.1 spoof).
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_amff: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value_t = PartitionArg::Eval)]
    pub partition: PartitionArg,
    /// Build scoring attractors from these enrollment utterances (SAMO only).
    #[arg(long)]
    pub enroll_protocol: Option<PathBuf>,
    /// Enrollment feature directory (default: --features).
    #[arg(long, requires = "enroll_protocol")]
    pub enroll_features: Option<PathBuf>,
    /// Score file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Miss cost (challenge default, not a modelling choice).
    #[arg(long, default_value_t = 1.0)]
    pub dcf_cmiss: f64,
    /// False-alarm cost (challenge default).
    #[arg(long, default_value_t = 10.0)]
    pub dcf_cfa: f64,
    /// Bonafide prior (challenge default).
    #[arg(long, default_value_t = 0.05)]
    pub dcf_ptarget: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum FuseCommand {
    /// Fit fusion weights on labelled scores.
    Train(FuseTrainArgs),
    /// Apply a fusion model to score files.
    Apply(FuseApplyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FuseTrainArgs {
    #[arg(long)]
    pub protocol: PathBuf,
    /// One score file per subsystem, in a fixed order.
    #[arg(long = "scores", required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// A second trial set (same subsystem order) pooled with the first.
    #[arg(long = "pool-scores", num_args = 1..)]
    pub pool_scores: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub prior: f64,
    /// Fusion model JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FuseApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long = "scores", required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Fused score file.
    #[arg(long)]
    pub out: PathBuf,
}
