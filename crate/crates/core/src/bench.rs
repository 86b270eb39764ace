//! Robustness benchmark builders: background-replaced variants of an
//! annotated set, and photometric corruptions.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::AnnotatedImage;
use crate::background::BackgroundPool;
use crate::geometry::Mask;
use crate::replace::{foreground_layers, replace_background, sample_backgrounds, ReplaceError};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("background pool shares {} image(s) with the excluded set: {}", .0.len(), .0.join(", "))]
    PoolOverlap(Vec<String>),
    #[error("background pool holds {available} images, {requested} needed per image")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("severity must be in 1..=5, got {0}")]
    InvalidSeverity(u8),
    #[error("image {0}: {1}")]
    Replace(String, ReplaceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleOrigin {
    Original,
    Background { variant_of: String, background_id: String },
    Corruption { variant_of: String, spec: CorruptionSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSample {
    pub image: AnnotatedImage,
    pub origin: SampleOrigin,
}

/// Variant `j` of image `id`.
pub fn variant_id(id: &str, j: usize) -> String {
    format!("{id}_bg{j}")
}

/// Each image followed by `variants_per_image` copies whose background is
/// replaced by distinct pool images; annotations are copied unchanged. No
/// mask-quality filtering is applied, so the output always holds
/// `|dataset| * (1 + variants_per_image)` samples.
pub fn build_background_variants(
    dataset: &[(AnnotatedImage, Vec<Mask>)],
    pool: &BackgroundPool,
    variants_per_image: usize,
    seed: u64,
    exclude: &HashSet<String>,
) -> Result<Vec<BenchSample>, BenchError> {
    let overlap: Vec<String> = pool
        .records()
        .iter()
        .filter(|r| exclude.contains(&r.id))
        .map(|r| r.id.clone())
        .collect();
    if !overlap.is_empty() {
        return Err(BenchError::PoolOverlap(overlap));
    }
    if pool.len() < variants_per_image {
        return Err(BenchError::PoolTooSmall {
            requested: variants_per_image,
            available: pool.len(),
        });
    }
    let groups: Vec<Vec<BenchSample>> = dataset
        .par_iter()
        .map(|(img, masks)| {
            let wrap = |e: ReplaceError| BenchError::Replace(img.source_id.clone(), e);
            let layers = foreground_layers(img, masks, false).map_err(wrap)?;
            let picks = sample_backgrounds(pool.len(), variants_per_image, derive_seed(seed, &format!("bench-bg/{}", img.source_id)))
                .map_err(wrap)?;
            let mut out = Vec::with_capacity(1 + variants_per_image);
            out.push(BenchSample {
                image: img.clone(),
                origin: SampleOrigin::Original,
            });
            for (j, i) in picks.into_iter().enumerate() {
                let record = &pool.records()[i];
                let bg = pool.image(record).map_err(|e| wrap(e.into()))?;
                let mut variant = replace_background(img, &layers, &bg).map_err(wrap)?;
                variant.source_id = variant_id(&img.source_id, j);
                out.push(BenchSample {
                    image: variant,
                    origin: SampleOrigin::Background {
                        variant_of: img.source_id.clone(),
                        background_id: record.id.clone(),
                    },
                });
            }
            Ok(out)
        })
        .collect::<Result<_, BenchError>>()?;
    Ok(groups.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    Contrast,
    Saturation,
    /// Additive brightness.
    Lighting,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::Contrast,
        CorruptionKind::Saturation,
        CorruptionKind::Lighting,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Saturation => "saturation",
            CorruptionKind::Lighting => "lighting",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| format!("unknown corruption {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self, BenchError> {
        if !(1..=5).contains(&severity) {
            return Err(BenchError::InvalidSeverity(severity));
        }
        Ok(Self { kind, severity, seed })
    }
}

/// Severity-indexed parameters, all on a `[0, 1]` intensity scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionTable {
    /// Noise standard deviation.
    pub gaussian_noise: [f64; 5],
    /// Contrast factor around mid-grey.
    pub contrast: [f64; 5],
    /// Chroma factor.
    pub saturation: [f64; 5],
    /// Brightness offset.
    pub lighting: [f64; 5],
}

impl Default for CorruptionTable {
    fn default() -> Self {
        Self {
            gaussian_noise: [0.04, 0.06, 0.08, 0.09, 0.10],
            contrast: [0.75, 0.5, 0.4, 0.3, 0.15],
            saturation: [0.9, 0.7, 0.5, 0.3, 0.1],
            lighting: [0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl CorruptionTable {
    pub fn param(&self, kind: CorruptionKind, severity: u8) -> f64 {
        let i = (severity.clamp(1, 5) - 1) as usize;
        match kind {
            CorruptionKind::GaussianNoise => self.gaussian_noise[i],
            CorruptionKind::Contrast => self.contrast[i],
            CorruptionKind::Saturation => self.saturation[i],
            CorruptionKind::Lighting => self.lighting[i],
        }
    }
}

pub fn corrupt(img: &RgbImage, spec: &CorruptionSpec) -> RgbImage {
    corrupt_with_table(img, spec, &CorruptionTable::default())
}

pub fn corrupt_with_table(img: &RgbImage, spec: &CorruptionSpec, table: &CorruptionTable) -> RgbImage {
    apply_corruption(img, spec.kind, table.param(spec.kind, spec.severity), spec.seed)
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Applies `kind` with an explicit parameter instead of a severity level.
pub fn apply_corruption(img: &RgbImage, kind: CorruptionKind, param: f64, seed: u64) -> RgbImage {
    let map = |f: &dyn Fn([f64; 3]) -> [f64; 3]| -> RgbImage {
        RgbImage::from_fn(img.width(), img.height(), |x, y| {
            let p = img.get_pixel(x, y).0.map(|c| c as f64 / 255.0);
            Rgb(f(p).map(to_u8))
        })
    };
    match kind {
        CorruptionKind::GaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, param.max(0.0)).expect("valid sigma");
            let mut out = img.clone();
            for p in out.pixels_mut() {
                for c in p.0.iter_mut() {
                    *c = to_u8(*c as f64 / 255.0 + noise.sample(&mut rng));
                }
            }
            out
        }
        CorruptionKind::Contrast => map(&|p| p.map(|c| (c - 0.5) * param + 0.5)),
        CorruptionKind::Saturation => map(&|p| {
            // Lightness is the HSL midpoint; scaling each channel's offset from
            // it scales HSL saturation while hue and lightness stay put.
            let l = (p[0].max(p[1]).max(p[2]) + p[0].min(p[1]).min(p[2])) / 2.0;
            p.map(|c| l + (c - l) * param)
        }),
        CorruptionKind::Lighting => map(&|p| p.map(|c| c + param)),
    }
}
