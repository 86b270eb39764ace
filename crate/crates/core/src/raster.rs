//! Cutouts, binary-alpha compositing, resampling and PNG I/O.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use image::{imageops, ImageBuffer, Rgb, RgbImage, Rgba, RgbaImage};
use thiserror::Error;

use crate::geometry::{mask_to_bbox, GeometryError, Mask};
use crate::provenance::Provenance;

/// Alpha values at or above this are foreground; everything else is
/// transparent. Alpha is stored binarized to 0 / 255.
pub const OPAQUE_THRESHOLD: u8 = 128;

pub const PROVENANCE_KEY: &str = "ccl-provenance";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cutout has no opaque pixel")]
    TransparentCutout,
    #[error("cutout {w}x{h} at ({x}, {y}) exceeds the {canvas_w}x{canvas_h} canvas")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        canvas_w: u32,
        canvas_h: u32,
    },
    #[error("mask is {mask_w}x{mask_h} but image is {img_w}x{img_h}")]
    MaskDims {
        mask_w: u32,
        mask_h: u32,
        img_w: u32,
        img_h: u32,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Encode {
        path: String,
        source: png::EncodingError,
    },
}

pub fn is_opaque(p: &Rgba<u8>) -> bool {
    p.0[3] >= OPAQUE_THRESHOLD
}

/// Foreground object pixels with binary alpha, cropped to the opaque region.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCutout {
    pixels: RgbaImage,
    category_id: u32,
}

impl ObjectCutout {
    /// Binarizes alpha and crops to the tight box of the opaque pixels.
    pub fn new(pixels: RgbaImage, category_id: u32) -> Result<Self, RasterError> {
        let (w, h) = pixels.dimensions();
        let mask = Mask::from_fn(w, h, |x, y| is_opaque(pixels.get_pixel(x, y)));
        let bb = mask_to_bbox(&mask).map_err(|_| RasterError::TransparentCutout)?;
        let mut cropped = imageops::crop_imm(&pixels, bb.x(), bb.y(), bb.w(), bb.h()).to_image();
        for p in cropped.pixels_mut() {
            p.0[3] = if p.0[3] >= OPAQUE_THRESHOLD { 255 } else { 0 };
        }
        Ok(Self {
            pixels: cropped,
            category_id,
        })
    }

    pub fn pixels(&self) -> &RgbaImage {
        &self.pixels
    }

    pub fn category_id(&self) -> u32 {
        self.category_id
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    /// Opaque region as a mask of the cutout's own size.
    pub fn alpha_mask(&self) -> Mask {
        Mask::from_fn(self.width(), self.height(), |x, y| {
            is_opaque(self.pixels.get_pixel(x, y))
        })
    }

    /// Area-averaged resample to `w`x`h`. Returns `None` if no pixel stays
    /// opaque at the new size.
    pub fn resized(&self, w: u32, h: u32) -> Option<ObjectCutout> {
        let scaled = resize_area(&self.pixels, w.max(1), h.max(1));
        ObjectCutout::new(scaled, self.category_id).ok()
    }
}

/// Area-averaging resample. Colour is averaged with alpha weighting so
/// transparent pixels do not bleed into edges.
pub fn resize_area(src: &RgbaImage, new_w: u32, new_h: u32) -> RgbaImage {
    let (sw, sh) = src.dimensions();
    let sx = sw as f64 / new_w as f64;
    let sy = sh as f64 / new_h as f64;
    let spans = |o: u32, scale: f64, limit: u32| -> Vec<(u32, f64)> {
        let lo = o as f64 * scale;
        let hi = ((o + 1) as f64 * scale).min(limit as f64);
        let mut out = Vec::new();
        let mut i = lo.floor() as u32;
        while (i as f64) < hi && i < limit {
            let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
            if cover > 0.0 {
                out.push((i, cover));
            }
            i += 1;
        }
        out
    };
    let xspans: Vec<_> = (0..new_w).map(|o| spans(o, sx, sw)).collect();
    let mut out = RgbaImage::new(new_w, new_h);
    for oy in 0..new_h {
        let yspan = spans(oy, sy, sh);
        for ox in 0..new_w {
            let (mut wsum, mut asum) = (0.0, 0.0);
            let mut csum = [0.0f64; 3];
            for &(iy, wy) in &yspan {
                for &(ix, wx) in &xspans[ox as usize] {
                    let p = src.get_pixel(ix, iy).0;
                    let w = wx * wy;
                    let a = p[3] as f64 / 255.0;
                    wsum += w;
                    asum += w * a;
                    for c in 0..3 {
                        csum[c] += w * a * p[c] as f64;
                    }
                }
            }
            let alpha = if wsum > 0.0 { asum / wsum } else { 0.0 };
            let mut px = [0u8; 4];
            if asum > 0.0 {
                for c in 0..3 {
                    px[c] = (csum[c] / asum).round().clamp(0.0, 255.0) as u8;
                }
            }
            px[3] = (alpha * 255.0).round().clamp(0.0, 255.0) as u8;
            out.put_pixel(ox, oy, Rgba(px));
        }
    }
    out
}

/// Bilinear resample of an RGB raster.
pub fn resize_bilinear(src: &RgbImage, w: u32, h: u32) -> RgbImage {
    if src.dimensions() == (w, h) {
        return src.clone();
    }
    imageops::resize(src, w, h, imageops::FilterType::Triangle)
}

/// Paints each cutout's opaque pixels over `bg`, later cutouts on top.
pub fn composite(cutouts: &[(&ObjectCutout, (u32, u32))], bg: &RgbImage) -> Result<RgbImage, RasterError> {
    let mut out = bg.clone();
    for (cutout, pos) in cutouts {
        paint(&mut out, cutout, *pos)?;
    }
    Ok(out)
}

pub(crate) fn paint(canvas: &mut RgbImage, cutout: &ObjectCutout, (x, y): (u32, u32)) -> Result<(), RasterError> {
    let (cw, ch) = canvas.dimensions();
    if x as u64 + cutout.width() as u64 > cw as u64 || y as u64 + cutout.height() as u64 > ch as u64 {
        return Err(RasterError::OutOfBounds {
            x,
            y,
            w: cutout.width(),
            h: cutout.height(),
            canvas_w: cw,
            canvas_h: ch,
        });
    }
    for (dx, dy, p) in cutout.pixels().enumerate_pixels() {
        if is_opaque(p) {
            canvas.put_pixel(x + dx, y + dy, Rgb([p.0[0], p.0[1], p.0[2]]));
        }
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> RasterError {
    RasterError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, RasterError> {
    let img = image::open(path).map_err(|source| RasterError::Decode {
        path: path.display().to_string(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Single-channel mask file; any value >= 128 is foreground.
pub fn load_mask(path: &Path) -> Result<Mask, RasterError> {
    let img = image::open(path)
        .map_err(|source| RasterError::Decode {
            path: path.display().to_string(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_fn(w, h, |x, y| img.get_pixel(x, y).0[0] >= 128))
}

pub fn mask_to_luma(m: &Mask) -> ImageBuffer<image::Luma<u8>, Vec<u8>> {
    ImageBuffer::from_fn(m.width(), m.height(), |x, y| {
        image::Luma([if m.get(x, y) { 255 } else { 0 }])
    })
}

/// Writes an 8-bit PNG carrying the provenance stamp as a text chunk.
fn write_png_raw(
    path: &Path,
    w: u32,
    h: u32,
    color: png::ColorType,
    data: &[u8],
    prov: &Provenance,
) -> Result<(), RasterError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let enc_err = |source| RasterError::Encode {
        path: path.display().to_string(),
        source,
    };
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let stamp = serde_json::to_string(prov).expect("provenance serializes");
    enc.add_text_chunk(PROVENANCE_KEY.to_string(), stamp)
        .map_err(enc_err)?;
    let mut writer = enc.write_header().map_err(enc_err)?;
    writer.write_image_data(data).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}

pub fn save_rgb_png(path: &Path, img: &RgbImage, prov: &Provenance) -> Result<(), RasterError> {
    write_png_raw(path, img.width(), img.height(), png::ColorType::Rgb, img.as_raw(), prov)
}

pub fn save_mask_png(path: &Path, m: &Mask, prov: &Provenance) -> Result<(), RasterError> {
    let luma = mask_to_luma(m);
    write_png_raw(path, m.width(), m.height(), png::ColorType::Grayscale, luma.as_raw(), prov)
}

/// Reads the provenance text chunk back from a PNG written by this crate.
pub fn read_png_provenance(path: &Path) -> Option<Provenance> {
    let file = fs::File::open(path).ok()?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let reader = decoder.read_info().ok()?;
    reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == PROVENANCE_KEY)
        .and_then(|t| serde_json::from_str(&t.text).ok())
}
