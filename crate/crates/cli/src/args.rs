use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "mtdepth",
    version,
    about = "Depth estimation by regression with an auxiliary interval classifier"
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic dataset as RGB and KITTI depth PNGs with a manifest.
    GenData(GenDataArgs),
    /// Run the exponential learning-rate sweep on a fresh model.
    LrFind(LrFindArgs),
    /// Train one configuration and write its logs and checkpoint.
    Train(TrainArgs),
    /// Run a preset comparison grid over several seeds.
    Ablate(AblateArgs),
    /// Score directories of KITTI depth PNGs against ground truth.
    Eval(EvalArgs),
    /// Predict a depth map for one image from a checkpoint.
    Predict(PredictArgs),
}

/// Output directory handling shared by every command.
#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Output directory; must be absent or empty unless --overwrite is given.
    #[arg(long)]
    pub out: PathBuf,
    /// Allow writing into an existing, non-empty output directory.
    #[arg(long)]
    pub overwrite: bool,
}

/// Flags that override fields of the experiment config.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON experiment config; omitted keys take their defaults and unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed [config default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total optimizer steps [config default: 2000].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Initial learning rate; without it a range test picks one [config default: range test].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Batch size [config default: 16].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Square training crop in pixels [config default: 32].
    #[arg(long)]
    pub crop: Option<usize>,
    /// Number of depth intervals for the classification head [config default: 32].
    #[arg(long)]
    pub n_cls: Option<usize>,
    /// Drop the classification head and train regression alone [config default: head enabled].
    #[arg(long)]
    pub no_aux: bool,
    /// Task weighting [config default: learned].
    #[arg(long, value_enum)]
    pub weighting: Option<Weighting>,
    /// Fixed weights W_REG,W_CLS; implies manual weighting [preset: 5,1].
    #[arg(long, value_name = "W_REG,W_CLS", value_parser = parse_weight_pair)]
    pub manual_weights: Option<[f64; 2]>,
    /// Steps between validations [config default: 100].
    #[arg(long)]
    pub validation_interval: Option<usize>,
    /// Batches prepared ahead by a worker thread, 0 to disable [config default: 2].
    #[arg(long)]
    pub prefetch: Option<usize>,
    /// Seed of the synthetic dataset [config default: 0].
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Training samples to render [config default: 256].
    #[arg(long)]
    pub train_samples: Option<usize>,
    /// Validation samples to render [config default: 32].
    #[arg(long)]
    pub val_samples: Option<usize>,
}

fn parse_weight_pair(text: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = text.split(',').collect();
    let [a, b] = parts.as_slice() else {
        return Err("expected two comma-separated numbers".into());
    };
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok([parse(a)?, parse(b)?])
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Equal,
    Manual,
    Learned,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct LrFindArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Sweep length in optimizer steps [config default: 250].
    #[arg(long)]
    pub steps: Option<usize>,
    /// First learning rate of the sweep [config default: 1e-7].
    #[arg(long)]
    pub start: Option<f64>,
    /// Last learning rate of the sweep [config default: 1].
    #[arg(long)]
    pub end: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Refresh the checkpoint every N steps; 0 writes it only at the end.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Axis to vary: n_cls, weighting, bounds or patch.
    #[arg(long)]
    pub axis: String,
    /// Seeds per cell.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// Runs trained in parallel threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted depth PNGs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth depth PNGs with matching file names.
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// 8-bit RGB, RGBA or grayscale PNG whose sides are multiples of 4.
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}
