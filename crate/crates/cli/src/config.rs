//! TOML configuration. Every key is optional; command-line flags win over
//! file values, which win over built-in defaults. Relative paths in the file
//! resolve against the file's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccl_core::bench::{CorruptionKind, CorruptionTable};
use ccl_core::prompts::Theme;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub paths: PathsConfig,
    pub select: SelectConfig,
    pub augment: AugmentConfig,
    pub genbg: GenBgConfig,
    pub backend: BackendConfig,
    pub filter: FilterConfig,
    pub replace: ReplaceConfig,
    pub bench: BenchConfig,
    pub eval: EvalConfig,
    pub loss: LossSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub annotations: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub backgrounds: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub exclude: Vec<PathBuf>,
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub budget: Option<usize>,
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub n_positions: Option<usize>,
    pub alpha: Option<f64>,
    pub n_r: Option<u32>,
    pub min_free_positions: Option<usize>,
    pub repeat: Option<u32>,
    pub all_images: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenBgConfig {
    pub total_prompts: Option<usize>,
    pub prompts_per_theme: Option<BTreeMap<Theme, usize>>,
    pub seeds_per_prompt: Option<u32>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub llm_url: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: Option<BackendKind>,
    pub url: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub t_iou: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaceConfig {
    pub k: Option<usize>,
    pub include_original: Option<bool>,
    pub erode: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub variants_per_image: Option<usize>,
    pub corruptions: Option<Vec<CorruptionKind>>,
    pub severity: Option<u8>,
    pub all_severities: Option<bool>,
    pub table: Option<CorruptionTable>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub tau: Option<f64>,
    pub lambda_i: Option<f64>,
    pub lambda_t: Option<f64>,
    pub prenormalize: Option<bool>,
    pub h: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("config {} is invalid", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [&mut p.annotations, &mut p.masks, &mut p.backgrounds, &mut p.out, &mut p.predictions] {
            if let Some(v) = slot.as_mut() {
                *v = base.join(&*v);
            }
        }
        for v in &mut p.exclude {
            *v = base.join(&*v);
        }
        Ok(cfg)
    }
}

/// First present value, then the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// A path that must be given somewhere and must exist.
pub fn existing_path(flag: Option<PathBuf>, file: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let Some(p) = flag.or(file) else {
        bail!("config invalid: no {what} path given (flag or [paths] entry)");
    };
    if !p.exists() {
        bail!("config invalid: {what} path {} does not exist", p.display());
    }
    Ok(p)
}
