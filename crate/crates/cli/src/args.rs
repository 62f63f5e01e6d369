use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::SplitName;

pub const COMMANDS: [&str; 8] = [
    "stimgen", "synth", "analyze", "train", "eval", "ablate", "serve", "export",
];

#[derive(Debug, Parser)]
#[command(
    name = "uncertainty",
    version,
    about = "Dot-comparison task tooling and multimodal uncertainty models"
)]
pub struct Cli {
    /// TOML or JSON file supplying default flag values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a 30-trial stimulus schedule.
    Stimgen(StimgenArgs),
    /// Write a calibrated synthetic dataset.
    Synth(SynthArgs),
    /// Label, difficulty, cue and demographic statistics for annotations.
    Analyze(AnalyzeArgs),
    /// Train a model over one or more seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Mask modalities and train or evaluate on what is left.
    Ablate(AblateArgs),
    /// Run the session service.
    Serve(ServeArgs),
    /// Export persisted sessions as annotation CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    EasyFirst,
    HardFirst,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Mlp,
    Mult,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainPresetArg {
    Default,
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    BestDevLoss,
    BestDevF1,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    ByRank,
    ByRankAndCondition,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct StimgenArgs {
    #[arg(long, value_enum, default_value = "random")]
    pub condition: ConditionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub display_ms: Option<u32>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    /// Feature noise standard deviation.
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub speech_prob: Option<f64>,
    /// Change in P(uncertain) from the easiest to the hardest rank.
    #[arg(long)]
    pub uncertainty_gradient: Option<f64>,
    /// Also write per-trial feature files and a feature manifest.
    #[arg(long)]
    pub materialize: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub participants: PathBuf,
    /// Schedule files; canonical schedules when omitted.
    #[arg(long, value_delimiter = ',')]
    pub schedule: Vec<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "by-rank-and-condition")]
    pub pooling: PoolingArg,
    /// Directory for the CSV and JSON report bundle.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Feature manifest or synthetic recipe; synthetic data from the flags below when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f64,
    /// Seed of the train/dev/test split; defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 30)]
    pub pool_window: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, visible_alias = "model", value_enum, default_value = "mult")]
    pub preset: KindArg,
    #[arg(long, value_enum, default_value = "default")]
    pub train_preset: TrainPresetArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub no_grad_clip: bool,
    #[arg(long)]
    pub class_weighted: bool,
    #[arg(long)]
    pub weighted_sampling: bool,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionArg>,
    /// Stop once dev weighted F1 reaches this value.
    #[arg(long)]
    pub stop_at_dev_f1: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Hidden width of the baseline MLP.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    /// Contrastive pre-training before supervised training.
    #[arg(long)]
    pub contrastive: bool,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Hinge on different-label pairs only.
    #[arg(long)]
    pub conventional: bool,
    /// Contrastive loss on each modality instead of the fused vector.
    #[arg(long)]
    pub per_modality: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for histories, checkpoints and the summary.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data source; the one recorded in the checkpoint when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report per age group.
    #[arg(long)]
    pub by_age: bool,
    #[arg(long)]
    pub participants: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AblateArgs {
    /// Modalities to mask: video, audio, text.
    #[arg(long, value_delimiter = ',', required = true)]
    pub modalities: Vec<String>,
    /// Evaluate this checkpoint instead of training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value = "sessions")]
    pub sessions_dir: PathBuf,
    /// Built task UI served under /.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ExportArgs {
    #[arg(long)]
    pub sessions_dir: PathBuf,
    /// Single session; every session when omitted.
    #[arg(long)]
    pub session: Option<String>,
    /// File for one session, directory for all; stdout for one session when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
