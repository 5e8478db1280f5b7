use std::net::SocketAddr;
use std::path::PathBuf;

use agf_core::dataset::LesionClass;
use agf_core::imageops::AugmentationPlan;
use clap::{Args, Parser, Subcommand};

use crate::config::Scale;

fn parse_class(s: &str) -> Result<LesionClass, String> {
    s.parse::<LesionClass>().map_err(|e| e.to_string())
}

fn parse_plan(s: &str) -> Result<AugmentationPlan, String> {
    s.parse::<AugmentationPlan>().map_err(|e| e.to_string())
}

/// Lesion-ROI classification with classic and GAN-synthesized augmentation.
#[derive(Debug, Parser)]
#[command(name = "agf", version, propagate_version = true, max_term_width = 100)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration layered over the scale preset
    #[arg(long, short = 'c', global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Preset the config file builds on [default: the file's `scale`, else desk]
    #[arg(long, global = true, value_enum)]
    pub scale: Option<Scale>,

    /// Override one config key, e.g. `experiment.classifier.epochs=5` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Run seed; shorthand for `--set seed=N`
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-fold and per-class work; results do not depend on it
    #[arg(long, short = 'j', global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=256))]
    pub jobs: u64,

    /// Root for default artifact paths
    #[arg(long, global = true, env = "AGF_DATA_DIR", default_value = "agf-data", value_name = "DIR")]
    pub data_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the phantom ROI dataset (ROI pack + manifest)
    PhantomGen(PhantomGenArgs),
    /// Assign patient-level cross-validation folds and store them in the manifest
    Folds(DatasetArgs),
    /// Expand ROIs with the classic augmentation plan
    Augment(AugmentArgs),
    /// Train the lesion classifier on the training folds and test it on the held-out fold
    TrainClf(TrainClfArgs),
    /// Train a DCGAN on one lesion class
    TrainDcgan(TrainDcganArgs),
    /// Train a class-conditional ACGAN on all lesion classes
    TrainAcgan(TrainAcganArgs),
    /// Sample synthetic ROIs from a trained generator
    Synth(SynthArgs),
    /// Score a classifier checkpoint on a held-out fold or ROI pack
    Evaluate(EvaluateArgs),
    /// Run the two-arm data-volume experiment and write the accuracy curve
    Experiment(ExperimentArgs),
    /// Embed classifier features of real, augmented and synthetic ROIs with t-SNE
    Tsne(TsneArgs),
    /// Serve the blinded rater study over HTTP
    RaterServe(RaterServeArgs),
    /// Score rater response logs and their agreement
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset directory holding rois.agrp and manifest.json [default: <data-dir>/dataset]
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory [default: <data-dir>/runs/<command>]
    #[arg(long, short = 'o', value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomGenArgs {
    /// Output directory [default: <data-dir>/dataset]
    #[arg(long, short = 'o', value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,

    /// Augmentation counts as rotations,flips,translations,rescales [default: from config]
    #[arg(long, value_parser = parse_plan, value_name = "R,F,T,S")]
    pub plan: Option<AugmentationPlan>,

    /// ROI to expand (repeatable) [default: the first ROI of each class]
    #[arg(long = "roi", value_name = "ID", conflicts_with = "all")]
    pub rois: Vec<String>,

    /// Expand every ROI in the dataset
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct FoldArg {
    /// Held-out test fold
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Debug, Args)]
pub struct TrainClfArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub fold: FoldArg,
    #[command(flatten)]
    pub out: OutArgs,

    /// Extra training ROIs (augmented or synthetic AGRP pack; repeatable)
    #[arg(long = "extra", value_name = "PACK")]
    pub extra: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainDcganArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub fold: FoldArg,
    #[command(flatten)]
    pub out: OutArgs,

    /// Lesion class to model: cyst, metastasis or hemangioma
    #[arg(long, value_parser = parse_class)]
    pub class: LesionClass,

    /// Extra training ROIs of any class (only `--class` ROIs are used; repeatable)
    #[arg(long = "extra", value_name = "PACK")]
    pub extra: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainAcganArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub fold: FoldArg,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArgs,

    /// Generator checkpoint (its .json sidecar must sit next to it)
    #[arg(long, value_name = "FILE")]
    pub generator: PathBuf,

    /// Lesion class of the samples (for a DCGAN: the class it was trained on)
    #[arg(long, value_parser = parse_class)]
    pub class: LesionClass,

    /// Number of ROIs to sample
    #[arg(long, short = 'n', default_value_t = 100)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub fold: FoldArg,
    #[command(flatten)]
    pub out: OutArgs,

    /// Classifier checkpoint
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Score this ROI pack instead of the held-out fold
    #[arg(long, value_name = "PACK")]
    pub pack: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub fold: FoldArg,
    #[command(flatten)]
    pub out: OutArgs,

    /// Classifier checkpoint supplying the features
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Classic augmentations embedded per held-out real ROI
    #[arg(long, default_value_t = 2, value_name = "N")]
    pub augmentations: usize,

    /// Synthetic ROIs to embed (repeatable)
    #[arg(long = "synthetic", value_name = "PACK")]
    pub synthetic: Vec<PathBuf>,

    /// Side of the rendered scatter plot in pixels
    #[arg(long, default_value_t = 512)]
    pub plot_size: usize,
}

#[derive(Debug, Args)]
pub struct RaterServeArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    /// Synthetic ROIs offered to raters (repeatable)
    #[arg(long = "synthetic", value_name = "PACK")]
    pub synthetic: Vec<PathBuf>,

    /// Directory of session logs [default: <data-dir>/rater]
    #[arg(long, value_name = "DIR")]
    pub log_dir: Option<PathBuf>,

    /// Listen address
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub out: OutArgs,

    /// One session log, or two to also compute their agreement
    #[arg(required = true, num_args = 1..=2, value_name = "LOG")]
    pub logs: Vec<PathBuf>,
}
