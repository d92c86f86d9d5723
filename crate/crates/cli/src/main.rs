mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "signforge", version, about = "Synthetic traffic-sign datasets and detector evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a COCO-annotated image corpus and standardize the survivors
    /// into square backgrounds.
    Prepare(PrepareArgs),
    /// Blend templates into backgrounds and write an annotated dataset.
    Generate(GenerateArgs),
    /// Score detections against ground truth.
    Evaluate(EvaluateArgs),
    /// Convert a GTSDB gt.txt file to COCO annotations.
    ImportGtsdbGt(ImportArgs),
    /// Print a generation config with default values.
    InitConfig(InitConfigArgs),
}

#[derive(clap::Args)]
pub struct PrepareArgs {
    /// Directory holding the corpus images.
    #[arg(long)]
    pub corpus_dir: PathBuf,
    /// COCO annotation file for the corpus.
    #[arg(long)]
    pub annotations: PathBuf,
    /// JSON exclusion policy (excluded_labels, min_width, min_height).
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, default_value = "prepare")]
    pub run_id: String,
}

#[derive(clap::Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of prepared background PNGs.
    #[arg(long)]
    pub backgrounds: PathBuf,
    /// Template manifest CSV (path,class_id,key_color).
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples; overrides the config.
    #[arg(long)]
    pub n: Option<u64>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Prefix of the image file names.
    #[arg(long, default_value = "synth")]
    pub run_id: String,
    /// Keep samples already present in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Also write per-sample coverage masks.
    #[arg(long)]
    pub emit_masks: bool,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    /// Detections as a COCO results array or image_id,x,y,w,h,score CSV.
    #[arg(long)]
    pub predictions: PathBuf,
    /// COCO ground-truth annotations.
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long, default_value_t = signforge::eval::DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    /// Fixed confidence cutoff.
    #[arg(long, conflicts_with = "select_threshold_on")]
    pub threshold: Option<f64>,
    /// Validation predictions and ground truth, used to pick the cutoff
    /// with the best F1.
    #[arg(long, num_args = 2, value_names = ["VAL_PRED", "VAL_GT"])]
    pub select_threshold_on: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub struct ImportArgs {
    /// GTSDB gt.txt.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output COCO JSON; a CSV mirror is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1360)]
    pub width: u32,
    #[arg(long, default_value_t = 800)]
    pub height: u32,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    Default,
    Baseline,
}

#[derive(clap::Args)]
pub struct InitConfigArgs {
    /// Smallest sign size in pixels the detector must handle.
    #[arg(long)]
    pub min_size: u32,
    /// Largest sign size in pixels the detector must handle.
    #[arg(long)]
    pub max_size: u32,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIGNFORGE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => commands::prepare(&args),
        Command::Generate(args) => commands::generate(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::ImportGtsdbGt(args) => commands::import_gtsdb(&args),
        Command::InitConfig(args) => commands::init_config(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
