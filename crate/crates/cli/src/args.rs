use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sact::features::{SpatialJitter, TemporalMode};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "sact", version, about = "Few-shot action recognition with spatial cross-attention over patch features")]
pub struct Cli {
    /// TOML run config; flags override its keys.
    #[arg(long, global = true, env = crate::config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write it as a feature pack.
    Gen(GenArgs),
    /// Train SA-CT episodically and write a model file.
    Train(TrainArgs),
    /// Evaluate a model over seeded tasks.
    Eval(EvalArgs),
    /// Train and evaluate a sweep of settings on synthetic data; prints CSV.
    Ablate(AblateArgs),
    /// Export the attention of one episode as CSV plus a JSON manifest.
    Attn(AttnArgs),
    /// Finite-difference check of every gradient for all 8 flag combinations.
    Gradcheck(GradcheckArgs),
    /// Multiply-add counts of the attention stage over a sweep of d_k.
    Cost(CostArgs),
    /// Print the effective config after applying the file and flags.
    Config(ConfigArgs),
}

/// Video shape, applied to both the model and the generator.
#[derive(Debug, Clone, Default, Args)]
pub struct ShapeArgs {
    /// Frames per video (L).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Patches per grid row (P).
    #[arg(long)]
    pub patches: Option<usize>,
    /// Channels per patch (D).
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub tmixer: Option<bool>,
    #[arg(long)]
    pub cpe: Option<bool>,
    /// Power of the frame count in the distance normaliser (1 or 2).
    #[arg(long)]
    pub exponent: Option<u32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub videos_per_class: Option<usize>,
    #[arg(long)]
    pub object_dim: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// off | per-video | per-frame
    #[arg(long, value_parser = parse_kebab::<SpatialJitter>)]
    pub spatial_jitter: Option<SpatialJitter>,
    /// none | order-pair
    #[arg(long, value_parser = parse_kebab::<TemporalMode>)]
    pub temporal_mode: Option<TemporalMode>,
    #[arg(long)]
    pub temporal_shift: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainingArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub train_tasks: Option<usize>,
    #[arg(long)]
    pub way: Option<usize>,
    #[arg(long)]
    pub shot: Option<usize>,
    #[arg(long)]
    pub eval_queries: Option<usize>,
    #[arg(long)]
    pub train_classes: Option<usize>,
}

/// Where the features come from.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Feature pack.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate the dataset from the `[synth]` section instead.
    #[arg(long)]
    pub synthetic: bool,
    /// Generator seed for --synthetic.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file to write (default: paths.model, else model.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainingArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of tasks (default: train.n_eval_tasks).
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Task seed (default: the config seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_queries: Option<usize>,
    #[arg(long)]
    pub train_classes: Option<usize>,
    /// Also evaluate the frame-averaging ProtoNet baseline on the same tasks.
    #[arg(long)]
    pub baseline: bool,
    /// Write the full report, including the correctness bitmap, as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    /// P = 1..7 on spatial data.
    Patches,
    /// TMixer on and off, on spatial and order-pair data.
    Tmixer,
    /// Frame normaliser exponent 1 and 2.
    Exponent,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub sweep: Sweep,
    /// CSV destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation tasks per row (default: train.n_eval_tasks).
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainingArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub episode_seed: u64,
    /// Pool the P×P grid to G×G; omitted keeps full resolution.
    #[arg(long)]
    pub downsample: Option<usize>,
    /// CSV destination; the manifest goes next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_classes: Option<usize>,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Episode and perturbation seed (default 11).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Smallest d_k of the sweep.
    #[arg(long, default_value_t = 1)]
    pub d_k_min: u64,
    /// Largest d_k of the sweep.
    #[arg(long, default_value_t = 4096)]
    pub d_k_max: u64,
    /// CSV with one row per d_k (default: summary only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainingArgs,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ShapeArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.model.frames, self.frames);
        set(&mut cfg.synth.frames, self.frames);
        set(&mut cfg.model.patches_per_side, self.patches);
        set(&mut cfg.synth.patches_per_side, self.patches);
        set(&mut cfg.model.channels, self.channels);
        set(&mut cfg.synth.channels, self.channels);
    }
}

impl ModelArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.model.d_k, self.d_k);
        set(&mut cfg.model.use_tmixer, self.tmixer);
        set(&mut cfg.model.use_cpe, self.cpe);
        set(&mut cfg.model.frame_norm_exponent, self.exponent);
    }
}

impl SynthArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.synth;
        set(&mut s.n_classes, self.classes);
        set(&mut s.videos_per_class, self.videos_per_class);
        set(&mut s.object_dim, self.object_dim);
        set(&mut s.noise_std, self.noise_std);
        set(&mut s.spatial_jitter, self.spatial_jitter);
        set(&mut s.temporal_mode, self.temporal_mode);
        set(&mut s.temporal_shift, self.temporal_shift);
    }
}

impl TrainingArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.train.learning_rate, self.lr);
        set(&mut cfg.train.n_train_tasks, self.train_tasks);
        set(&mut cfg.train.way, self.way);
        set(&mut cfg.train.shot, self.shot);
        set(&mut cfg.train.eval_queries, self.eval_queries);
        set(&mut cfg.train_classes, self.train_classes);
    }
}

impl DataArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.synth.seed, self.data_seed);
        if self.data.is_some() {
            cfg.paths.data.clone_from(&self.data);
        }
    }
}
