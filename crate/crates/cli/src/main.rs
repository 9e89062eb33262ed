//! `kan-sam`: data generation, training, evaluation, prediction and
//! diagnostics for the KAN-adapter RGB-T saliency model.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort
//! (including a failed gradient check), 4 I/O or file-format error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kansam::data::Regime;
use kansam::diagnostics::Scale;
use kansam::train::Variant;
use serde::de::DeserializeOwned;

pub use config::CliConfig;

#[derive(Debug)]
pub enum CliError {
    Core(kansam::Error),
    Usage(String),
    /// A check ran to completion and failed its tolerance.
    Tolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Tolerance(_) => 3,
            CliError::Core(e) => match e {
                kansam::Error::Config(_) | kansam::Error::Dimension { .. } | kansam::Error::Contract(_) => 2,
                kansam::Error::Numerical(_) => 3,
                kansam::Error::Format { .. } | kansam::Error::Io { .. } => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Tolerance(m) => f.write_str(m),
        }
    }
}

impl From<kansam::Error> for CliError {
    fn from(e: kansam::Error) -> Self {
        CliError::Core(e)
    }
}

/// Parses a kebab-case enum value through its serde representation.
fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("invalid value {s:?}"))
}

#[derive(Debug, Parser)]
#[command(
    name = "kan-sam",
    version,
    about = "RGB-thermal salient object detection with KAN thermal-prompting adapters"
)]
#[command(after_help = "Exit codes: 0 success, 2 usage/config error, 3 numerical abort, 4 I/O error.")]
pub struct Cli {
    /// Worker threads for evaluation [config: train.threads]
    #[arg(long, global = true, env = "KAN_SAM_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic RGB-T dataset with train and test manifests.
    GenData(GenDataArgs),
    /// Train one ablation variant and write checkpoints, log and final report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Predict one saliency map and write it as a PGM.
    Predict(PredictArgs),
    /// Compare backward gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the frozen/tunable parameter partition and adapter sizes.
    CountParams(CountParamsArgs),
    /// Write one masking pattern as a three-colour PPM.
    MaskPreview(MaskPreviewArgs),
    /// Train every variant over several seeds and compare on the test set.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML file with [model], [train], [mask] and [scene] tables [command line only]
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct ModelOverrides {
    /// Input side length in pixels [config: model.input_size]
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Patch side length [config: model.patch_size]
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Decoder upsampling: sub-pixel or nearest [config: model.decoder_upsample]
    #[arg(long, value_parser = kebab::<kansam::model::Upsample>)]
    pub decoder_upsample: Option<kansam::model::Upsample>,
    /// Adapter bottleneck reduction r [config: model.adapter_reduction]
    #[arg(long)]
    pub adapter_reduction: Option<usize>,
    /// Spline grid intervals G [config: model.spline.intervals]
    #[arg(long)]
    pub spline_intervals: Option<usize>,
    /// Spline degree k [config: model.spline.degree]
    #[arg(long)]
    pub spline_degree: Option<usize>,
    /// Forward precision: f64 or f32 [config: model.precision]
    #[arg(long, value_parser = kebab::<kansam::autograd::Precision>)]
    pub precision: Option<kansam::autograd::Precision>,
}

#[derive(Debug, Default, Args)]
pub struct TrainOverrides {
    /// Learning rate [config: train.lr]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Samples per optimizer step [config: train.batch_size]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Number of epochs [config: train.max_epochs]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Decoupled weight decay [config: train.weight_decay]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// AdamW first-moment decay [config: train.beta1]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// AdamW second-moment decay [config: train.beta2]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Gradient clipping limit [config: train.grad_clip]
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Clipping mode: norm or value [config: train.clip_mode]
    #[arg(long, value_parser = kebab::<kansam::train::ClipMode>)]
    pub clip_mode: Option<kansam::train::ClipMode>,
    /// Learning-rate schedule: constant or cosine [config: train.schedule]
    #[arg(long, value_parser = kebab::<kansam::train::Schedule>)]
    pub schedule: Option<kansam::train::Schedule>,
    /// Disable flip, rotation and crop augmentation [config: train.augment.flip/rotate/crop]
    #[arg(long)]
    pub no_augment: bool,
    /// Masking probability per pixel [config: mask.p_mask]
    #[arg(long)]
    pub p_mask: Option<f64>,
    /// Masking mode: per-pair or per-modality [config: mask.mode]
    #[arg(long, value_parser = kebab::<kansam::masking::MaskMode>)]
    pub mask_mode: Option<kansam::masking::MaskMode>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output directory [command line only]
    #[arg(long)]
    pub out: PathBuf,
    /// Scene regime: rgb-easy or thermal-informative; sets the four contrast values [config: scene.*_contrast]
    #[arg(long, value_parser = |s: &str| s.parse::<Regime>().map_err(|e| e.to_string()))]
    pub regime: Option<Regime>,
    /// Training samples [command line only]
    #[arg(long, default_value_t = 16)]
    pub n_train: usize,
    /// Test samples [command line only]
    #[arg(long, default_value_t = 8)]
    pub n_test: usize,
    /// Scene seed [config: scene.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Image side length [config: scene.image_size]
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Gaussian noise standard deviation [config: scene.noise_sigma]
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Training manifest [command line only]
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest evaluated after every epoch; defaults to --data [command line only]
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Output directory for checkpoints, log and report [command line only]
    #[arg(long)]
    pub out: PathBuf,
    /// Ablation variant: full, base, mask-only or kan-only [command line only]
    #[arg(long, default_value = "full", value_parser = |s: &str| s.parse::<Variant>().map_err(|e| e.to_string()))]
    pub variant: Variant,
    /// Seed for initialization, shuffling, masking and augmentation [config: train.seed]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file [command line only]
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest to evaluate [command line only]
    #[arg(long)]
    pub data: PathBuf,
    /// Binarization for F_avg and E_m: sweep or adaptive [command line only]
    #[arg(long, default_value = "sweep", value_parser = kebab::<kansam::metrics::ThresholdMode>)]
    pub threshold_mode: kansam::metrics::ThresholdMode,
    /// Write the JSON report (mean and per-sample) here [command line only]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of the table [command line only]
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint file [command line only]
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// RGB input as a binary PPM [command line only]
    #[arg(long)]
    pub rgb: PathBuf,
    /// Thermal input as a binary PGM [command line only]
    #[arg(long)]
    pub thermal: PathBuf,
    /// Output saliency map, binary PGM [command line only]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// primitive, layer or model [command line only]
    #[arg(long, default_value = "primitive", value_parser = |s: &str| s.parse::<Scale>().map_err(|e| e.to_string()))]
    pub scale: Scale,
    /// Seed for inputs and parameters [command line only]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CountParamsArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub model: ModelOverrides,
    /// Print the report as JSON [command line only]
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct MaskPreviewArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Pattern seed [command line only]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length in pixels [command line only]
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Output PPM: grey unmasked, red RGB-masked, blue thermal-masked [command line only]
    #[arg(long)]
    pub out: PathBuf,
    /// Masking probability per pixel [config: mask.p_mask]
    #[arg(long)]
    pub p_mask: Option<f64>,
    /// Masking mode: per-pair or per-modality [config: mask.mode]
    #[arg(long, value_parser = kebab::<kansam::masking::MaskMode>)]
    pub mask_mode: Option<kansam::masking::MaskMode>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Training manifest [command line only]
    #[arg(long)]
    pub train_data: PathBuf,
    /// Test manifest [command line only]
    #[arg(long)]
    pub test_data: PathBuf,
    /// Comma-separated seeds [command line only]
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Comma-separated variants [command line only]
    #[arg(long, value_delimiter = ',', default_value = "base,mask-only,kan-only,full",
          value_parser = |s: &str| s.parse::<Variant>().map_err(|e| e.to_string()))]
    pub variants: Vec<Variant>,
    /// Write the JSON report here [command line only]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelOverrides,
    #[command(flatten)]
    pub train: TrainOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
