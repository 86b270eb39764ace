//! `ccl`: corpus synthesis, benchmark building, evaluation and loss tooling.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use anyhow::{Context, Result};
use ccl_core::bench::CorruptionKind;
use clap::{Args, Parser, Subcommand};

use config::{BackendKind, FileConfig};

#[derive(Parser, Debug)]
#[command(name = "ccl", version, about = "Contextual-consistency data synthesis, benchmarks and losses")]
pub struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; all randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the deterministic synthetic corpus (images, masks, annotations).
    Fixture(FixtureArgs),
    /// Pick a category-covering subset of an annotated corpus.
    Select(SelectArgs),
    /// Insert donor objects from other categories into single-class images.
    Augment(AugmentArgs),
    /// Generate a themed background pool and its manifest.
    GenBg(GenBgArgs),
    /// Composite each image's foreground onto K sampled backgrounds.
    Replace(ReplaceArgs),
    /// Build background-variant and corruption benchmarks.
    BuildBench(BuildBenchArgs),
    /// Apply one corruption to one image.
    Corrupt(CorruptArgs),
    /// AP per partition, mFULL and rFULL.
    Eval(EvalArgs),
    /// Consistency loss of feature batches.
    Loss(LossArgs),
    /// Compare the analytic loss gradient with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    /// Annotation document; image files resolve against its directory.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Directory of `<image_id>_<index>.png` masks.
    #[arg(long)]
    pub masks: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 96)]
    pub width: u32,
    #[arg(long, default_value_t = 72)]
    pub height: u32,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Number of images to keep.
    #[arg(long, conflicts_with = "reduction")]
    pub budget: Option<usize>,
    /// Fraction of images to keep, in (0, 1].
    #[arg(long)]
    pub reduction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Separate donor corpus annotations (default: the input corpus).
    #[arg(long, requires = "donor_masks")]
    pub donor_annotations: Option<PathBuf>,
    #[arg(long, requires = "donor_annotations")]
    pub donor_masks: Option<PathBuf>,
    #[arg(long)]
    pub n_positions: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_r: Option<u32>,
    #[arg(long)]
    pub min_free_positions: Option<usize>,
    /// Insertions attempted per image.
    #[arg(long)]
    pub repeat: Option<u32>,
    /// Augment multi-class images too.
    #[arg(long)]
    pub all_images: bool,
}

#[derive(Args, Debug)]
pub struct GenBgArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Image endpoint for the http backend.
    #[arg(long, env = "CCL_BACKEND_URL")]
    pub url: Option<String>,
    /// Descriptions in total, split across themes in the reference ratio.
    #[arg(long)]
    pub total_prompts: Option<usize>,
    #[arg(long)]
    pub seeds_per_prompt: Option<u32>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// Expand descriptions through this LLM endpoint instead of the built-in corpus.
    #[arg(long)]
    pub llm_url: Option<String>,
}

#[derive(Args, Debug)]
pub struct ReplaceArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Background manifest.
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    /// Variants per image.
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Emit the original alongside its variants.
    #[arg(long)]
    pub include_original: Option<bool>,
    #[arg(long)]
    pub t_iou: Option<f64>,
    /// Erode masks by one pixel before cutting.
    #[arg(long)]
    pub erode: bool,
}

#[derive(Args, Debug)]
pub struct BuildBenchArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Background manifest; without it only corruption sets are built.
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    /// Background manifests that must not share images with the pool.
    #[arg(long)]
    pub exclude: Vec<PathBuf>,
    #[arg(long)]
    pub variants: Option<usize>,
    /// Corruptions to apply (default: all four).
    #[arg(long, value_delimiter = ',')]
    pub corruptions: Option<Vec<CorruptionKind>>,
    #[arg(long)]
    pub severity: Option<u8>,
    /// Build every severity 1..=5 instead of one.
    #[arg(long)]
    pub all_severities: bool,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub kind: CorruptionKind,
    #[arg(long, conflicts_with = "param")]
    pub severity: Option<u8>,
    /// Explicit parameter instead of a severity level.
    #[arg(long)]
    pub param: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth annotation document.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Predictions on the clean set.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Predictions on a corrupted set, as `kind@severity=path` or `kind=path`.
    #[arg(long = "corrupted")]
    pub corrupted: Vec<String>,
    /// IoU thresholds (default 0.50:0.05:0.95).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct LossFlags {
    #[arg(long)]
    pub tau: Option<f64>,
    /// L2-normalize features before centroids are formed.
    #[arg(long)]
    pub prenormalize: bool,
}

#[derive(Args, Debug)]
pub struct LossArgs {
    /// Image-side feature batch (FBT1 binary or JSON).
    #[arg(long)]
    pub image: PathBuf,
    /// Text-side feature batch.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long)]
    pub lambda_i: Option<f64>,
    #[arg(long)]
    pub lambda_t: Option<f64>,
    #[command(flatten)]
    pub loss: LossFlags,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Feature batch to check.
    #[arg(long, conflicts_with = "random")]
    pub features: Option<PathBuf>,
    /// Random batches of shape C,K,D.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub random: Option<Vec<usize>>,
    /// Number of random batches.
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    #[arg(long)]
    pub h: Option<f64>,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[command(flatten)]
    pub loss: LossFlags,
}

/// Resolved global settings.
pub struct Ctx {
    pub file: FileConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Ctx {
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .context("config invalid: a seed is required (--seed or `seed` in the config file)")
    }

    pub fn out(&self) -> Result<PathBuf> {
        self.out
            .clone()
            .context("config invalid: an output directory is required (--out or [paths] out)")
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.workers.or(file.workers) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("starting worker pool")?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(file.seed),
        out: cli.out.clone().or_else(|| file.paths.out.clone()),
        file,
    };
    match cli.command {
        Command::Fixture(a) => commands::fixture(&ctx, a),
        Command::Select(a) => commands::select(&ctx, a),
        Command::Augment(a) => commands::augment(&ctx, a),
        Command::GenBg(a) => commands::gen_bg(&ctx, a),
        Command::Replace(a) => commands::replace(&ctx, a),
        Command::BuildBench(a) => commands::build_bench(&ctx, a),
        Command::Corrupt(a) => commands::corrupt(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Loss(a) => commands::loss(&ctx, a),
        Command::GradCheck(a) => commands::grad_check(&ctx, a),
    }
}
