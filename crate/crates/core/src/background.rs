//! Background pool generation: theme prompts in, images plus an append-only
//! JSON-lines manifest out.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::{expansion_instruction, static_corpus, static_corpus_len, Theme};
use crate::provenance::{sha256_hex, Provenance};
use crate::raster::{load_rgb, save_rgb_png, RasterError};
use crate::seed::{derive_seed, fnv1a64, splitmix64};

/// Canonical stored size of generated backgrounds.
pub const CANONICAL_SIZE: u32 = 512;

/// Images generated per description by default (about 144,654 images over
/// 13,185 descriptions).
pub const DEFAULT_SEEDS_PER_PROMPT: u32 = 11;

/// Descriptions per theme in the reference background corpus.
pub const REFERENCE_THEME_COUNTS: [(Theme, usize); 3] = [
    (Theme::Seasonal, 3387),
    (Theme::Sky, 3399),
    (Theme::NaturalLandscape, 3399),
];

#[derive(Debug, Error)]
pub enum BgError {
    #[error("prompt count must be >= 1")]
    ZeroCount,
    #[error("static corpus for {theme} holds {available} prompts, {requested} requested")]
    CorpusExhausted {
        theme: Theme,
        requested: usize,
        available: usize,
    },
    #[error("endpoint {url} unreachable: {reason}")]
    EndpointUnreachable { url: String, reason: String },
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("{failed_count} of {total} generations failed: {}", failed.join("; "))]
    PartialFailure {
        failed: Vec<String>,
        failed_count: usize,
        total: usize,
    },
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThemePrompt {
    pub theme: Theme,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expander {
    StaticCorpus,
    LlmEndpoint { url: String },
}

/// `count` distinct descriptions for `theme`.
pub fn expand_prompts(theme: Theme, count: usize, expander: &Expander) -> Result<Vec<ThemePrompt>, BgError> {
    if count == 0 {
        return Err(BgError::ZeroCount);
    }
    let texts = match expander {
        Expander::StaticCorpus => {
            let available = static_corpus_len(theme);
            if count > available {
                return Err(BgError::CorpusExhausted {
                    theme,
                    requested: count,
                    available,
                });
            }
            static_corpus(theme).take(count).collect()
        }
        Expander::LlmEndpoint { url } => request_prompts(url, theme, count)?,
    };
    Ok(texts.into_iter().map(|text| ThemePrompt { theme, text }).collect())
}

fn http_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(300))
        .build()
        .expect("http client builds")
}

fn request_prompts(url: &str, theme: Theme, count: usize) -> Result<Vec<String>, BgError> {
    let body = serde_json::json!({
        "instruction": expansion_instruction(theme, count),
        "theme": theme.as_str(),
        "count": count,
    });
    let resp = http_client()
        .post(url)
        .json(&body)
        .send()
        .map_err(|e| BgError::EndpointUnreachable {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| BgError::BackendFailure(e.to_string()))?;
    if !status.is_success() {
        return Err(BgError::BackendFailure(format!("{url} returned {status}")));
    }
    let candidates = parse_prompt_listing(&text);
    let mut seen = HashSet::new();
    let distinct: Vec<String> = candidates
        .into_iter()
        .filter(|p| seen.insert(p.clone()))
        .take(count)
        .collect();
    if distinct.len() < count {
        return Err(BgError::BackendFailure(format!(
            "{url} returned {} distinct prompts, {count} requested",
            distinct.len()
        )));
    }
    Ok(distinct)
}

/// Accepts `{"prompts": [...]}` or a plain numbered list, one prompt per line.
pub fn parse_prompt_listing(text: &str) -> Vec<String> {
    #[derive(Deserialize)]
    struct Listing {
        prompts: Vec<String>,
    }
    if let Ok(l) = serde_json::from_str::<Listing>(text) {
        return l.prompts.into_iter().map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect();
    }
    text.lines()
        .map(|line| {
            let line = line.trim();
            let rest = line.trim_start_matches(|c: char| c.is_ascii_digit());
            if rest.len() != line.len() {
                rest.trim_start_matches(['.', ')', ':']).trim()
            } else {
                line.trim_start_matches(['-', '*']).trim()
            }
        })
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Image generator reached by text prompt.
pub trait GenBackend: Send + Sync {
    fn id(&self) -> String;
    fn generate(&self, prompt: &ThemePrompt, seed: u64, width: u32, height: u32) -> Result<RgbImage, BgError>;
}

/// Deterministic procedural backend: layered value noise tinted with a
/// theme palette. Each pixel depends only on the prompt hash, the seed and
/// its absolute coordinates.
#[derive(Debug, Clone, Default)]
pub struct StubBackend;

const OCTAVE_CELLS: [f64; 5] = [256.0, 128.0, 64.0, 32.0, 16.0];

fn palette(theme: Theme) -> [[f64; 3]; 4] {
    match theme {
        Theme::Seasonal => [
            [214.0, 170.0, 84.0],
            [178.0, 74.0, 42.0],
            [96.0, 140.0, 62.0],
            [232.0, 236.0, 240.0],
        ],
        Theme::Sky => [
            [70.0, 120.0, 200.0],
            [150.0, 190.0, 235.0],
            [245.0, 200.0, 170.0],
            [236.0, 240.0, 248.0],
        ],
        Theme::NaturalLandscape => [
            [70.0, 110.0, 60.0],
            [140.0, 120.0, 90.0],
            [90.0, 130.0, 150.0],
            [190.0, 175.0, 140.0],
        ],
    }
}

fn lattice(key: u64, octave: usize, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(
        key ^ splitmix64(octave as u64 + 1)
            ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn fractal_noise(key: u64, x: u32, y: u32) -> f64 {
    let (mut total, mut norm, mut amp) = (0.0, 0.0, 1.0);
    for (o, cell) in OCTAVE_CELLS.iter().enumerate() {
        let fx = x as f64 / cell;
        let fy = y as f64 / cell;
        let (ix, iy) = (fx.floor() as i64, fy.floor() as i64);
        let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
        let a = lattice(key, o, ix, iy);
        let b = lattice(key, o, ix + 1, iy);
        let c = lattice(key, o, ix, iy + 1);
        let d = lattice(key, o, ix + 1, iy + 1);
        let top = a + (b - a) * tx;
        let bottom = c + (d - c) * tx;
        total += amp * (top + (bottom - top) * ty);
        norm += amp;
        amp *= 0.5;
    }
    total / norm
}

fn palette_at(p: &[[f64; 3]; 4], t: f64) -> [f64; 3] {
    let pos = t.clamp(0.0, 1.0) * 3.0;
    let i = (pos.floor() as usize).min(2);
    let f = pos - i as f64;
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = p[i][c] + (p[i + 1][c] - p[i][c]) * f;
    }
    out
}

impl StubBackend {
    pub fn pixel(prompt: &ThemePrompt, seed: u64, x: u32, y: u32) -> Rgb<u8> {
        let base = fnv1a64(prompt.theme.as_str().as_bytes()) ^ fnv1a64(prompt.text.as_bytes()).rotate_left(17) ^ splitmix64(seed);
        let pal = palette(prompt.theme);
        let hue = fractal_noise(base, x, y);
        let accent = fractal_noise(base ^ 0x5151_5151, x, y);
        let shade = fractal_noise(base ^ 0xa3a3_a3a3, x, y);
        let primary = palette_at(&pal, (hue - 0.2) * 1.7);
        let secondary = palette_at(&pal, accent);
        let brightness = 0.8 + 0.4 * shade;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let v = (0.7 * primary[c] + 0.3 * secondary[c]) * brightness;
            px[c] = v.round().clamp(0.0, 255.0) as u8;
        }
        Rgb(px)
    }
}

impl GenBackend for StubBackend {
    fn id(&self) -> String {
        "stub-v1".to_string()
    }

    fn generate(&self, prompt: &ThemePrompt, seed: u64, width: u32, height: u32) -> Result<RgbImage, BgError> {
        Ok(RgbImage::from_fn(width, height, |x, y| Self::pixel(prompt, seed, x, y)))
    }
}

/// Remote backend: `POST {prompt, seed, width, height}` answered with PNG bytes.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            client: http_client(),
        }
    }
}

impl GenBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn generate(&self, prompt: &ThemePrompt, seed: u64, width: u32, height: u32) -> Result<RgbImage, BgError> {
        let body = serde_json::json!({
            "prompt": prompt.text,
            "seed": seed,
            "width": width,
            "height": height,
        });
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| BgError::BackendFailure(format!("{}: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BgError::BackendFailure(format!("{} returned {status}", self.url)));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| BgError::BackendFailure(e.to_string()))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| BgError::BackendFailure(format!("undecodable image: {e}")))?
            .to_rgb8();
        if img.dimensions() != (width, height) {
            return Err(BgError::BackendFailure(format!(
                "requested {width}x{height}, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(img)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundRecord {
    pub id: String,
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub theme: Theme,
    pub prompt: String,
    pub seed: u64,
    pub backend_id: String,
}

/// Identifier derived from everything that determines the image.
pub fn record_id(backend_id: &str, prompt: &str, seed: u64) -> String {
    let key = format!("{backend_id}\u{0}{prompt}\u{0}{seed}");
    sha256_hex(key.as_bytes())[..16].to_string()
}

/// Generates one background and writes its PNG under `out_dir`.
pub fn generate_background(
    prompt: &ThemePrompt,
    seed: u64,
    (width, height): (u32, u32),
    backend: &dyn GenBackend,
    out_dir: &Path,
    prov: &Provenance,
) -> Result<BackgroundRecord, BgError> {
    if width == 0 || height == 0 {
        return Err(BgError::BackendFailure("dimensions must be positive".into()));
    }
    let backend_id = backend.id();
    let id = record_id(&backend_id, &prompt.text, seed);
    let image_path = format!("images/{}/{id}.png", prompt.theme);
    let img = backend.generate(prompt, seed, width, height)?;
    save_rgb_png(&out_dir.join(&image_path), &img, prov)?;
    Ok(BackgroundRecord {
        id,
        image_path,
        theme: prompt.theme,
        prompt: prompt.text.clone(),
        seed,
        backend_id,
    })
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    provenance: Provenance,
}

/// JSON-lines manifest: an optional provenance header line, then one record
/// per line.
pub fn read_manifest(path: &Path) -> Result<(Option<Provenance>, Vec<BackgroundRecord>), BgError> {
    let err = |reason: String| BgError::Manifest {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut header = None;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if n == 0 {
            if let Ok(h) = serde_json::from_str::<ManifestHeader>(line) {
                header = Some(h.provenance);
                continue;
            }
        }
        records.push(serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", n + 1)))?);
    }
    Ok((header, records))
}

/// Appends records, writing the header first when the file is new.
pub fn append_manifest(path: &Path, prov: &Provenance, records: &[BackgroundRecord]) -> Result<(), BgError> {
    let err = |e: std::io::Error| BgError::Manifest {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(&serde_json::to_string(&ManifestHeader { provenance: prov.clone() }).expect("serializes"));
        buf.push('\n');
    }
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("serializes"));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(err)
}

/// Loaded manifest with image access relative to its directory.
#[derive(Debug, Clone)]
pub struct BackgroundPool {
    dir: PathBuf,
    records: Vec<BackgroundRecord>,
}

impl BackgroundPool {
    pub fn load(manifest: &Path) -> Result<Self, BgError> {
        let (_, records) = read_manifest(manifest)?;
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, records })
    }

    pub fn new(dir: PathBuf, records: Vec<BackgroundRecord>) -> Self {
        Self { dir, records }
    }

    pub fn records(&self) -> &[BackgroundRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, record: &BackgroundRecord) -> PathBuf {
        self.dir.join(&record.image_path)
    }

    pub fn image(&self, record: &BackgroundRecord) -> Result<RgbImage, BgError> {
        Ok(load_rgb(&self.image_path(record))?)
    }
}

#[derive(Debug, Clone)]
pub struct BgSetConfig {
    /// Descriptions per theme.
    pub prompts_per_theme: BTreeMap<Theme, usize>,
    pub seeds_per_prompt: u32,
    pub width: u32,
    pub height: u32,
    pub expander: Expander,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl BgSetConfig {
    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.jsonl")
    }
}

/// Splits `total` descriptions over the themes in the reference proportions.
pub fn reference_split(total: usize) -> BTreeMap<Theme, usize> {
    let sum: usize = REFERENCE_THEME_COUNTS.iter().map(|(_, n)| n).sum();
    let mut out = BTreeMap::new();
    let mut assigned = 0;
    for (i, (theme, n)) in REFERENCE_THEME_COUNTS.iter().enumerate() {
        let share = if i + 1 == REFERENCE_THEME_COUNTS.len() {
            total - assigned
        } else {
            (total * n + sum / 2) / sum
        };
        assigned += share;
        out.insert(*theme, share);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub total: usize,
    pub generated: usize,
    pub skipped: usize,
}

/// Seed of the `index`-th image of a description.
pub fn image_seed(run_seed: u64, prompt: &ThemePrompt, index: u32) -> u64 {
    derive_seed(run_seed, &format!("bg/{}/{}/{index}", prompt.theme, prompt.text))
}

/// Generates every (description, seed) pair not already present in the
/// manifest and appends the new records in job order.
pub fn build_background_set(cfg: &BgSetConfig, backend: &dyn GenBackend, prov: &Provenance) -> Result<BuildReport, BgError> {
    let manifest = cfg.manifest_path();
    let existing: HashSet<String> = if manifest.exists() {
        let (_, records) = read_manifest(&manifest)?;
        records
            .into_iter()
            .filter(|r| cfg.out_dir.join(&r.image_path).exists())
            .map(|r| r.id)
            .collect()
    } else {
        HashSet::new()
    };

    let backend_id = backend.id();
    let mut jobs = Vec::new();
    for (&theme, &count) in &cfg.prompts_per_theme {
        if count == 0 {
            continue;
        }
        for prompt in expand_prompts(theme, count, &cfg.expander)? {
            for i in 0..cfg.seeds_per_prompt {
                let seed = image_seed(cfg.seed, &prompt, i);
                jobs.push((prompt.clone(), seed));
            }
        }
    }
    let total = jobs.len();
    let pending: Vec<_> = jobs
        .into_iter()
        .filter(|(p, s)| !existing.contains(&record_id(&backend_id, &p.text, *s)))
        .collect();
    let skipped = total - pending.len();

    let results: Vec<Result<BackgroundRecord, (String, BgError)>> = pending
        .par_iter()
        .map(|(p, s)| {
            generate_background(p, *s, (cfg.width, cfg.height), backend, &cfg.out_dir, prov)
                .map_err(|e| (format!("{} (seed {s})", p.text), e))
        })
        .collect();

    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(rec) => ok.push(rec),
            Err((what, e)) => failed.push(format!("{what}: {e}")),
        }
    }
    if !ok.is_empty() || !manifest.exists() {
        append_manifest(&manifest, prov, &ok)?;
    }
    if !failed.is_empty() {
        return Err(BgError::PartialFailure {
            failed_count: failed.len(),
            total: pending.len(),
            failed,
        });
    }
    Ok(BuildReport {
        total,
        generated: ok.len(),
        skipped,
    })
}
