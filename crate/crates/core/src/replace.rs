//! Background replacement: cut the annotated foreground out with its masks
//! and paste it, unchanged and in place, onto sampled pool backgrounds.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::AnnotatedImage;
use crate::background::{BackgroundPool, BgError};
use crate::geometry::{iou, mask_to_bbox, BBox, GeometryError, Mask};
use crate::raster::{composite, resize_bilinear, ObjectCutout, RasterError};
use image::{Rgba, RgbaImage};

#[derive(Debug, Error)]
pub enum ReplaceError {
    #[error("background pool holds {available} images, {requested} requested")]
    PoolTooSmall { requested: usize, available: usize },
    #[error("{masks} masks supplied for {annotations} annotations")]
    MaskCount { masks: usize, annotations: usize },
    #[error("invalid IoU threshold {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Background(#[from] BgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityFilterParams {
    pub t_iou: f64,
}

impl Default for QualityFilterParams {
    fn default() -> Self {
        Self { t_iou: 0.75 }
    }
}

impl QualityFilterParams {
    pub fn new(t_iou: f64) -> Result<Self, ReplaceError> {
        if !(t_iou > 0.0 && t_iou <= 1.0) {
            return Err(ReplaceError::InvalidThreshold(t_iou));
        }
        Ok(Self { t_iou })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "iou", rename_all = "lowercase")]
pub enum MaskVerdict {
    Accept(f64),
    Reject(f64),
}

impl MaskVerdict {
    pub fn accepted(&self) -> bool {
        matches!(self, MaskVerdict::Accept(_))
    }

    pub fn iou(&self) -> f64 {
        match self {
            MaskVerdict::Accept(v) | MaskVerdict::Reject(v) => *v,
        }
    }
}

/// Accepts a mask iff the IoU of its tight box with the ground-truth box is
/// strictly greater than the threshold.
pub fn mask_quality_filter(m: &Mask, gt: &BBox, p: &QualityFilterParams) -> Result<MaskVerdict, GeometryError> {
    let v = iou(&mask_to_bbox(m)?, gt);
    Ok(if v > p.t_iou {
        MaskVerdict::Accept(v)
    } else {
        MaskVerdict::Reject(v)
    })
}

/// Cutout cropped to the mask's tight box, alpha taken from the mask bits.
/// Also returns the crop origin in image coordinates.
pub fn extract_foreground(img: &AnnotatedImage, m: &Mask) -> Result<(ObjectCutout, (u32, u32)), ReplaceError> {
    if (m.width(), m.height()) != (img.width(), img.height()) {
        return Err(RasterError::MaskDims {
            mask_w: m.width(),
            mask_h: m.height(),
            img_w: img.width(),
            img_h: img.height(),
        }
        .into());
    }
    let bb = mask_to_bbox(m)?;
    let rgba = RgbaImage::from_fn(bb.w(), bb.h(), |dx, dy| {
        let (x, y) = (bb.x() + dx, bb.y() + dy);
        let p = img.pixels.get_pixel(x, y).0;
        let a = if m.get(x, y) { 255 } else { 0 };
        Rgba([p[0], p[1], p[2], a])
    });
    // category is irrelevant for replacement; owners relabel if needed
    let cutout = ObjectCutout::new(rgba, 0)?;
    Ok((cutout, (bb.x(), bb.y())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantGroup {
    pub source_id: String,
    pub variants: Vec<AnnotatedImage>,
    pub background_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    MaskQuality,
    EmptyMask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExpandOutcome {
    Group(VariantGroup),
    Rejected {
        reason: RejectReason,
        /// Verdict per annotation, in annotation order.
        verdicts: Vec<Option<MaskVerdict>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExpandOptions {
    /// Erode each mask by one pixel before cutting.
    pub erode: bool,
}

/// Foreground cutouts for every mask, in annotation order.
pub fn foreground_layers(img: &AnnotatedImage, masks: &[Mask], erode: bool) -> Result<Vec<(ObjectCutout, (u32, u32))>, ReplaceError> {
    masks
        .iter()
        .map(|m| {
            if erode {
                let e = m.eroded();
                if e.is_empty() {
                    extract_foreground(img, m)
                } else {
                    extract_foreground(img, &e)
                }
            } else {
                extract_foreground(img, m)
            }
        })
        .collect()
}

/// Composites the foreground layers onto `bg` resized to the image size.
pub fn replace_background(
    img: &AnnotatedImage,
    layers: &[(ObjectCutout, (u32, u32))],
    bg: &image::RgbImage,
) -> Result<AnnotatedImage, ReplaceError> {
    let bg = resize_bilinear(bg, img.width(), img.height());
    let refs: Vec<_> = layers.iter().map(|(c, p)| (c, *p)).collect();
    Ok(AnnotatedImage {
        source_id: img.source_id.clone(),
        pixels: composite(&refs, &bg)?,
        annotations: img.annotations.clone(),
    })
}

/// `k` distinct pool indices drawn without replacement.
pub fn sample_backgrounds(pool_len: usize, k: usize, seed: u64) -> Result<Vec<usize>, ReplaceError> {
    if pool_len < k {
        return Err(ReplaceError::PoolTooSmall {
            requested: k,
            available: pool_len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, pool_len, k).into_vec())
}

/// Builds `k` background-replaced variants of `img`, or rejects the whole
/// image when any mask fails the quality filter.
pub fn expand_image(
    img: &AnnotatedImage,
    masks: &[Mask],
    pool: &BackgroundPool,
    k: usize,
    filter: &QualityFilterParams,
    seed: u64,
    opts: ExpandOptions,
) -> Result<ExpandOutcome, ReplaceError> {
    if masks.len() != img.annotations.len() {
        return Err(ReplaceError::MaskCount {
            masks: masks.len(),
            annotations: img.annotations.len(),
        });
    }
    if pool.len() < k {
        return Err(ReplaceError::PoolTooSmall {
            requested: k,
            available: pool.len(),
        });
    }
    let mut verdicts = Vec::with_capacity(masks.len());
    let mut reason = None;
    for (m, a) in masks.iter().zip(&img.annotations) {
        match mask_quality_filter(m, &a.bbox, filter) {
            Ok(v) => {
                if !v.accepted() {
                    reason.get_or_insert(RejectReason::MaskQuality);
                }
                verdicts.push(Some(v));
            }
            Err(GeometryError::EmptyMask) => {
                reason.get_or_insert(RejectReason::EmptyMask);
                verdicts.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(reason) = reason {
        return Ok(ExpandOutcome::Rejected { reason, verdicts });
    }

    let layers = foreground_layers(img, masks, opts.erode)?;
    let picks = sample_backgrounds(pool.len(), k, seed)?;
    let mut variants = Vec::with_capacity(k);
    let mut background_ids = Vec::with_capacity(k);
    for i in picks {
        let record = &pool.records()[i];
        let bg = pool.image(record)?;
        variants.push(replace_background(img, &layers, &bg)?);
        background_ids.push(record.id.clone());
    }
    Ok(ExpandOutcome::Group(VariantGroup {
        source_id: img.source_id.clone(),
        variants,
        background_ids,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Annotation;
    use image::{Rgb, RgbImage};

    fn img(w: u32, h: u32) -> AnnotatedImage {
        AnnotatedImage {
            source_id: "i".into(),
            pixels: RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, (x * y) as u8])),
            annotations: vec![Annotation::new(BBox::new(0, 0, w, h).unwrap(), 1)],
        }
    }

    #[test]
    fn full_mask_extracts_whole_image() {
        let i = img(6, 4);
        let (c, pos) = extract_foreground(&i, &Mask::from_fn(6, 4, |_, _| true)).unwrap();
        assert_eq!(pos, (0, 0));
        assert_eq!((c.width(), c.height()), (6, 4));
        for (x, y, p) in c.pixels().enumerate_pixels() {
            let s = i.pixels.get_pixel(x, y).0;
            assert_eq!(p.0, [s[0], s[1], s[2], 255]);
        }
    }

    #[test]
    fn checkerboard_alpha_matches_mask() {
        let i = img(6, 6);
        let m = Mask::from_fn(6, 6, |x, y| (x + y) % 2 == 0);
        let (c, pos) = extract_foreground(&i, &m).unwrap();
        assert_eq!(pos, (0, 0));
        for (x, y, p) in c.pixels().enumerate_pixels() {
            assert_eq!(p.0[3] == 255, m.get(x, y));
        }
    }

    #[test]
    fn empty_and_mismatched_masks() {
        let i = img(4, 4);
        assert!(matches!(
            extract_foreground(&i, &Mask::empty(4, 4)),
            Err(ReplaceError::Geometry(GeometryError::EmptyMask))
        ));
        assert!(matches!(
            extract_foreground(&i, &Mask::empty(5, 4)),
            Err(ReplaceError::Raster(RasterError::MaskDims { .. }))
        ));
    }

    #[test]
    fn filter_examples() {
        let gt = BBox::new(0, 0, 100, 100).unwrap();
        let p = QualityFilterParams::default();
        let same = Mask::from_bbox(100, 100, &gt);
        assert_eq!(mask_quality_filter(&same, &gt, &p).unwrap(), MaskVerdict::Accept(1.0));
        let half = Mask::from_bbox(100, 100, &BBox::new(0, 0, 50, 100).unwrap());
        assert_eq!(mask_quality_filter(&half, &gt, &p).unwrap(), MaskVerdict::Reject(0.5));
        let boundary = Mask::from_bbox(100, 100, &BBox::new(0, 0, 75, 100).unwrap());
        assert_eq!(mask_quality_filter(&boundary, &gt, &p).unwrap(), MaskVerdict::Reject(0.75));
        assert!(QualityFilterParams::new(0.0).is_err());
        assert!(QualityFilterParams::new(1.0).is_ok());
    }

    #[test]
    fn composite_no_cutouts_is_background() {
        let bg = RgbImage::from_pixel(5, 5, Rgb([1, 2, 3]));
        assert_eq!(composite(&[], &bg).unwrap(), bg);
    }

    #[test]
    fn full_cover_cutout_replaces_everything() {
        let i = img(5, 5);
        let (c, pos) = extract_foreground(&i, &Mask::from_fn(5, 5, |_, _| true)).unwrap();
        let bg = RgbImage::from_pixel(5, 5, Rgb([9, 9, 9]));
        assert_eq!(composite(&[(&c, pos)], &bg).unwrap(), i.pixels);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let s = sample_backgrounds(10, 10, 3).unwrap();
        let mut sorted = s.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(s, sample_backgrounds(10, 10, 3).unwrap());
        assert!(matches!(sample_backgrounds(3, 4, 0), Err(ReplaceError::PoolTooSmall { .. })));
    }
}
