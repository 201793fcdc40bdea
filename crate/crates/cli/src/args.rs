use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "handcast", version, about = "Future hand prediction and robot control on a synthetic first-person world")]
pub struct Cli {
    /// Workspace root holding corpus/, checkpoints/, reports/, overlays/ and demos/.
    #[arg(long, global = true, env = "HANDCAST_WORKSPACE", default_value = "workspace")]
    pub workspace: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus: labeled frames, interaction episodes, robot logs.
    Generate(GenerateArgs),
    /// Train one stage, or every stage in dependency order.
    Train(TrainArgs),
    /// Score future hand prediction methods on a corpus split.
    Eval(EvalArgs),
    /// Render prediction overlays for one episode.
    Predict(PredictArgs),
    /// Run the closed-loop arm control demo.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// interaction, clear_table, push_trivet, static or constant_velocity.
    #[arg(long, default_value = "interaction")]
    pub scenario: String,
    #[arg(long, default_value_t = 47)]
    pub episodes: usize,
    /// Episodes in the training split (default: 32 of every 47).
    #[arg(long)]
    pub train_episodes: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub detector_frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: <workspace>/corpus).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// handnet, regressor, manip, baseline_hands_only, baseline_future_detector or all.
    #[arg(long)]
    pub stage: String,
    /// TOML config; omitted keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory (default: the config's data entry under the workspace).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory (default: <workspace>/checkpoints).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed applied to every stage.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Regressor window lengths, comma separated (default: the config's k).
    #[arg(long = "k", value_delimiter = ',')]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Comma separated: full_k<K>, hands_only, future_detector.
    #[arg(long, value_delimiter = ',', default_value = "full_k10,full_k1,hands_only,future_detector")]
    pub methods: Vec<String>,
    /// test or train.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report directory (default: <workspace>/reports).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Episode id, e.g. ep_040.
    #[arg(long)]
    pub episode: String,
    /// Single current frame; by default one frame per second is sampled.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long = "K", alias = "k", default_value_t = 10)]
    pub k: usize,
    /// Upscaling factor of the overlay images.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Overlay directory (default: <workspace>/overlays).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// interaction, clear_table, push_trivet, static or constant_velocity.
    #[arg(long, default_value = "interaction")]
    pub scenario: String,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drive the arm with the scripted future and the IK oracle.
    #[arg(long, conflicts_with = "untrained")]
    pub oracle: bool,
    /// Use randomly initialized networks (negative control).
    #[arg(long)]
    pub untrained: bool,
    /// Demo directory (default: <workspace>/demos).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}
