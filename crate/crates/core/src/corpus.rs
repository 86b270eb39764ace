//! On-disk corpus layout: an annotation document whose image files are
//! relative to the document's directory, and a masks directory holding
//! `<id>_<index>.png` per annotation.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::annotation::{mask_file_name, AnnotatedImage, AnnotationDoc, AnnotationError};
use crate::geometry::Mask;
use crate::provenance::Provenance;
use crate::raster::{load_mask, load_rgb, save_mask_png, save_rgb_png, RasterError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("image {id}: file is {actual:?}, document says {declared:?}")]
    DimensionMismatch {
        id: String,
        declared: (u32, u32),
        actual: (u32, u32),
    },
    #[error("image {0} is listed in the document but has no entry")]
    MissingImage(String),
}

pub struct Corpus {
    pub doc: AnnotationDoc,
    pub root: PathBuf,
}

impl Corpus {
    pub fn load(doc_path: &Path) -> Result<Self, CorpusError> {
        let doc = AnnotationDoc::load(doc_path)?;
        doc.validate()?;
        Ok(Self {
            doc,
            root: doc_path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.doc.images.iter().map(|i| i.id.clone()).collect()
    }

    pub fn annotated(&self, id: &str) -> Result<AnnotatedImage, CorpusError> {
        let entry = self.doc.image(id).ok_or_else(|| CorpusError::MissingImage(id.to_string()))?;
        let pixels = load_rgb(&self.root.join(&entry.file))?;
        if pixels.dimensions() != (entry.width, entry.height) {
            return Err(CorpusError::DimensionMismatch {
                id: id.to_string(),
                declared: (entry.width, entry.height),
                actual: pixels.dimensions(),
            });
        }
        let annotations = self.doc.annotations_by_image().remove(id).unwrap_or_default();
        Ok(AnnotatedImage {
            source_id: id.to_string(),
            pixels,
            annotations,
        })
    }

    /// One mask per annotation of `img`, read from `masks_dir`.
    pub fn masks(&self, img: &AnnotatedImage, masks_dir: &Path) -> Result<Vec<Mask>, CorpusError> {
        (0..img.annotations.len())
            .map(|i| Ok(load_mask(&masks_dir.join(mask_file_name(&img.source_id, i)))?))
            .collect()
    }
}

/// Writes `images/<id>.png` and, when given, `masks/<id>_<i>.png` under
/// `dir`, and returns the image path relative to `dir`.
pub fn write_sample(
    dir: &Path,
    img: &AnnotatedImage,
    masks: Option<&[Mask]>,
    prov: &Provenance,
) -> Result<String, CorpusError> {
    let rel = format!("images/{}.png", img.source_id);
    save_rgb_png(&dir.join(&rel), &img.pixels, prov)?;
    if let Some(masks) = masks {
        for (i, m) in masks.iter().enumerate() {
            save_mask_png(&dir.join("masks").join(mask_file_name(&img.source_id, i)), m, prov)?;
        }
    }
    Ok(rel)
}
