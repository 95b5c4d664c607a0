//! Command-line argument definitions.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "hadsplat",
    about = "Hallucination-aware splat training on synthetic scenes",
    version
)]
pub struct Cli {
    /// Seed threaded through all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (HAD_SPLAT_THREADS overrides).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// JSON config file (training or augmentor parameters).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Raster format for image dumps.
    #[arg(long, global = true, default_value = "ppm", value_parser = ["ppm", "png"])]
    pub image_format: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene and persist it.
    Scene(SceneArgs),
    /// Train a splat model on a scene directory.
    Train(TrainArgs),
    /// Run one augmentation round offline against a checkpoint.
    Augment(AugmentArgs),
    /// Score a directory of augmented views with a fitted scorer.
    Score(ScoreArgs),
    /// Fuse a version stack directory into a single image.
    Fuse(FuseArgs),
    /// Compute metrics for a checkpoint over scene views.
    Eval(EvalArgs),
    /// Run a full experiment preset matrix.
    Ablate(AblateArgs),
    /// Curate scorer-training triplets for a scene.
    Triplets(TripletsArgs),
    /// Fit and persist a scorer model from triplet directories.
    FitScorer(FitScorerArgs),
}

#[derive(Args, Debug)]
pub struct SceneArgs {
    /// Scene spec JSON; flags below are ignored when present.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = "blob_field", value_parser = ["blob_field", "textured_room"])]
    pub kind: String,
    #[arg(long, default_value_t = 140)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 9)]
    pub inputs: usize,
    #[arg(long, default_value_t = 6)]
    pub targets: usize,
    #[arg(long, default_value_t = 4)]
    pub tests: usize,
    /// Image size as WxH.
    #[arg(long, default_value = "64x64")]
    pub size: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Scene directory produced by `scene`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Fitted scorer JSON (required for had/had_ms without oracle scores).
    #[arg(long)]
    pub scorer: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Checkpoint JSON of the current splat model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scorer: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scorer: PathBuf,
    /// Round directory holding pose_NNN subdirectories.
    #[arg(long)]
    pub round: PathBuf,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Stack directory: version_NN.ppm + version_NN_score.pfm + stack.json.
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long, default_value = "argmin", value_parser = ["argmin", "weighted"])]
    pub method: String,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated roles to evaluate.
    #[arg(long, default_value = "test")]
    pub roles: String,
    /// Method label written to the CSV.
    #[arg(long, default_value = "checkpoint")]
    pub method: String,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Preset name.
    #[arg(value_parser = [
        "ablate_components",
        "ablate_k",
        "ablate_fusion",
        "ablate_threshold",
        "scorer_eval",
    ])]
    pub preset: String,
    /// Comma-separated training seeds overriding the preset defaults.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Args, Debug)]
pub struct TripletsArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Splat checkpoint fitted on the input views; trained on the fly when
    /// absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitScorerArgs {
    /// Comma-separated triplet directories (each self-contained with an
    /// inputs/ subdirectory).
    #[arg(long)]
    pub triplets: String,
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    /// Five-character mask like 11111; 0 disables a feature.
    #[arg(long, default_value = "11111")]
    pub feature_mask: String,
}
