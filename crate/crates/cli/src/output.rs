use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use ccl_core::provenance::Provenance;
use ccl_core::raster::{read_png_provenance, save_mask_png, save_rgb_png};
use ccl_core::geometry::Mask;
use image::RgbImage;
use serde::Serialize;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// JSON-lines file: a provenance header, then one line per record.
pub fn write_jsonl<T: Serialize>(path: &Path, prov: &Provenance, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{}", serde_json::json!({ "provenance": prov }))?;
    for r in records {
        writeln!(buf, "{}", serde_json::to_string(r)?)?;
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// True when `path` is a PNG already stamped with this provenance.
fn up_to_date(path: &Path, prov: &Provenance) -> bool {
    path.exists() && read_png_provenance(path).as_ref() == Some(prov)
}

/// Writes the PNG unless an identical-provenance file already exists.
pub fn save_rgb(path: &Path, img: &RgbImage, prov: &Provenance) -> Result<bool> {
    if up_to_date(path, prov) {
        return Ok(false);
    }
    save_rgb_png(path, img, prov).with_context(|| format!("writing {}", path.display()))?;
    Ok(true)
}

pub fn save_mask(path: &Path, m: &Mask, prov: &Provenance) -> Result<bool> {
    if up_to_date(path, prov) {
        return Ok(false);
    }
    save_mask_png(path, m, prov).with_context(|| format!("writing {}", path.display()))?;
    Ok(true)
}
