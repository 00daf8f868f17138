use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "maskpipe", version, about = "Face-mask detection toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Darknet-style configuration file
    #[arg(long, global = true, value_name = "PATH")]
    pub cfg: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotation parsing, face slices, balancing and splitting
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Detection metrics and few-shot evaluation
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Annotate a video stream with detections
    Annotate(AnnotateArgs),
    /// Time the annotation pipeline
    Bench(BenchArgs),
    /// Loss utilities
    #[command(subcommand)]
    Loss(LossCmd),
    /// Inspect training configuration
    #[command(subcommand)]
    Config(ConfigCmd),
    /// Generate synthetic test data
    #[command(subcommand)]
    Synth(SynthCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
pub enum CropFormatArg {
    #[default]
    Ppm,
    Png,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default, PartialEq, Eq)]
pub enum SplitBy {
    /// Keep all faces of an image on the same side
    #[default]
    Image,
    /// Split faces independently
    Slice,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Crop every annotated face into a slice dataset
    BuildSlices {
        /// Directory of VOC annotation files
        #[arg(long)]
        annotations: PathBuf,
        /// Directory of the annotated images
        #[arg(long)]
        images: PathBuf,
        /// Output directory (crops/ and manifest.tsv)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: CropFormatArg,
    },
    /// Print the per-class histogram and imbalance ratio
    Stats {
        /// Directory of VOC annotation files
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        annotations: Option<PathBuf>,
        /// Slice manifest
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Cap every class of a slice manifest at a fixed count
    Undersample {
        #[arg(long)]
        manifest: PathBuf,
        /// Per-class cap
        #[arg(long)]
        cap: usize,
        /// Output manifest
        #[arg(long)]
        out: PathBuf,
    },
    /// Seeded 4:1 train/validation split of a slice manifest
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for train.tsv and val.tsv
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        by: SplitBy,
    },
    /// Write augmented copies of every slice
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (crops/ and manifest.tsv)
        #[arg(long)]
        out: PathBuf,
        /// Augmented copies per slice
        #[arg(long, default_value_t = 1)]
        copies: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct EpisodeArgs {
    /// Support pool: slice manifest (.tsv) or embedding file (.memb)
    #[arg(long)]
    pub train: PathBuf,
    /// Query set; when omitted the pool is split 4:1 (manifests by source image)
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Ridge added to every class covariance
    #[arg(long, default_value_t = maskpipe::fewshot::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Cap each class of the support pool before sampling
    #[arg(long)]
    pub cap: Option<usize>,
    /// Nearest class mean instead of Mahalanobis distance
    #[arg(long)]
    pub euclidean: bool,
    /// Class covariance plus ridge, without the task-level blend
    #[arg(long, conflicts_with = "euclidean")]
    pub ridge_only: bool,
    /// Column name for the feature extractor
    #[arg(long, default_value = "baseline")]
    pub extractor: String,
    /// Write the table as CSV here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Precision, recall and F1 of predicted boxes against VOC annotations
    Detections {
        /// JSON lines: {"image": ..., "detections": [{x1,y1,x2,y2,conf,class_id}]}
        #[arg(long)]
        pred: PathBuf,
        /// Directory of VOC annotation files
        #[arg(long)]
        truth: PathBuf,
        /// Minimum IoU for a true positive
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        /// Ignore predictions below this confidence
        #[arg(long, default_value_t = 0.0)]
        conf_thresh: f64,
        /// Write the table as CSV here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One few-shot episode
    Episodic {
        #[command(flatten)]
        episode: EpisodeArgs,
        /// Supports per class: a count or "full"
        #[arg(long, default_value = "full")]
        support_size: String,
    },
    /// Few-shot accuracy over several support sizes
    Sweep {
        #[command(flatten)]
        episode: EpisodeArgs,
        /// Comma-separated support sizes
        #[arg(long, default_value = "50,100,500,full")]
        support_size: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Default, PartialEq, Eq)]
pub enum ModelKind {
    /// Colored-marker detector for synthetic scenes
    #[default]
    Synthetic,
    /// Replay stored head outputs (<tensors>/<frame:06>.mgrd)
    Playback,
    /// Fixed-cost stub returning nothing
    Stub,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t)]
    pub model: ModelKind,
    /// Tensor directory for the playback model
    #[arg(long, required_if_eq("model", "playback"))]
    pub tensors: Option<PathBuf>,
    /// Anchor sizes as "w,h;w,h;..." in image fractions
    #[arg(long, default_value = "0.1,0.1")]
    pub anchors: String,
    /// Minimum detection confidence
    #[arg(long, default_value_t = 0.25)]
    pub conf_thresh: f32,
    /// NMS overlap threshold
    #[arg(long, default_value_t = 0.45)]
    pub iou_thresh: f32,
    /// Suppress overlaps across classes too
    #[arg(long)]
    pub class_agnostic: bool,
    /// Per-frame cost of the stub model in milliseconds
    #[arg(long, default_value_t = 1.0)]
    pub stub_ms: f64,
}

#[derive(Debug, Clone, Args)]
pub struct AnnotateArgs {
    /// Input stream
    #[arg(long)]
    pub input: PathBuf,
    /// Annotated output stream
    #[arg(long)]
    pub out: PathBuf,
    /// Detections sidecar; defaults to the output path with .jsonl
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Run the model on every N-th frame
    #[arg(long, default_value_t = 1)]
    pub skip: usize,
    /// Track instances across skipped frames
    #[arg(long)]
    pub track: bool,
    /// Refine tracked boxes by pixel matching within this radius
    #[arg(long)]
    pub refine: Option<i32>,
    /// Inter-stage queue size; 1 runs sequentially
    #[arg(long, default_value_t = 1)]
    pub queue: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Input stream
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Run the model on every N-th frame
    #[arg(long, default_value_t = 1)]
    pub skip: usize,
}

#[derive(Debug, Subcommand)]
pub enum LossCmd {
    /// Compare analytic and finite-difference gradients
    Check {
        /// Random problems to check
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        grid: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Central-difference step
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigCmd {
    /// Print the effective configuration and learning rates
    Show {
        /// Iterations at which to print the learning rate
        #[arg(long, value_delimiter = ',', default_value = "0,50,100,200,4000,4250,4500,4600")]
        at: Vec<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    /// Write a synthetic stream with moving marker objects
    Video {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 320)]
        width: u32,
        #[arg(long, default_value_t = 240)]
        height: u32,
        #[arg(long, default_value_t = 60)]
        frames: u64,
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 25)]
        fps: u32,
    },
}
