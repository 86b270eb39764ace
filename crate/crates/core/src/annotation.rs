//! Annotated images and the COCO-style annotation document.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::provenance::Provenance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionType {
    Presence,
    Absence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub bbox: BBox,
    pub category_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description_type: Option<DescriptionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_ref: Option<String>,
}

impl Annotation {
    pub fn new(bbox: BBox, category_id: u32) -> Self {
        Self {
            bbox,
            category_id,
            description: None,
            description_type: None,
            mask_ref: None,
        }
    }
}

/// Raster plus its object annotations; the unit flowing through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub source_id: String,
    pub pixels: RgbImage,
    pub annotations: Vec<Annotation>,
}

impl AnnotatedImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn categories(&self) -> HashSet<u32> {
        self.annotations.iter().map(|a| a.category_id).collect()
    }

    /// Checks every box lies on the canvas.
    pub fn validate(&self) -> Result<(), AnnotationError> {
        for (i, a) in self.annotations.iter().enumerate() {
            if !a.bbox.fits_within(self.width(), self.height()) {
                return Err(AnnotationError::BoxOutOfBounds {
                    image_id: self.source_id.clone(),
                    index: i,
                });
            }
        }
        Ok(())
    }
}

/// File name of the mask belonging to annotation `index` of `source_id`.
pub fn mask_file_name(source_id: &str, index: usize) -> String {
    format!("{source_id}_{index}.png")
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation {index} of image {image_id} lies outside the image")]
    BoxOutOfBounds { image_id: String, index: usize },
    #[error("annotation references unknown image {0}")]
    UnknownImage(String),
    #[error("annotation references unknown category {0}")]
    UnknownCategory(u32),
    #[error("duplicate image id {0}")]
    DuplicateImage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub file: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub image_id: String,
    pub bbox: BBox,
    pub category_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description_type: Option<DescriptionType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<AnnotationEntry>,
    pub categories: Vec<CategoryEntry>,
}

impl AnnotationDoc {
    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| AnnotationError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AnnotationError> {
        let io = |source| AnnotationError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut text = serde_json::to_string_pretty(self).expect("doc serializes");
        text.push('\n');
        fs::write(path, text).map_err(io)
    }

    /// Referential integrity and in-bounds boxes.
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let mut dims = HashMap::new();
        for img in &self.images {
            if dims.insert(img.id.as_str(), (img.width, img.height)).is_some() {
                return Err(AnnotationError::DuplicateImage(img.id.clone()));
            }
        }
        let cats: HashSet<u32> = self.categories.iter().map(|c| c.id).collect();
        let mut per_image: HashMap<&str, usize> = HashMap::new();
        for a in &self.annotations {
            let &(w, h) = dims
                .get(a.image_id.as_str())
                .ok_or_else(|| AnnotationError::UnknownImage(a.image_id.clone()))?;
            if !cats.contains(&a.category_id) {
                return Err(AnnotationError::UnknownCategory(a.category_id));
            }
            let idx = per_image.entry(a.image_id.as_str()).or_default();
            if !a.bbox.fits_within(w, h) {
                return Err(AnnotationError::BoxOutOfBounds {
                    image_id: a.image_id.clone(),
                    index: *idx,
                });
            }
            *idx += 1;
        }
        Ok(())
    }

    /// Annotations grouped by image id, keeping document order within each
    /// image. Annotation `i` of an image owns mask `<id>_<i>.png`.
    pub fn annotations_by_image(&self) -> BTreeMap<&str, Vec<Annotation>> {
        let mut out: BTreeMap<&str, Vec<Annotation>> = BTreeMap::new();
        for img in &self.images {
            out.entry(img.id.as_str()).or_default();
        }
        for a in &self.annotations {
            let list = out.entry(a.image_id.as_str()).or_default();
            let index = list.len();
            list.push(Annotation {
                bbox: a.bbox,
                category_id: a.category_id,
                description: a.description.clone(),
                description_type: a.description_type,
                mask_ref: Some(mask_file_name(&a.image_id, index)),
            });
        }
        out
    }

    pub fn image(&self, id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Appends an image and its annotations.
    pub fn push_image(&mut self, entry: ImageEntry, annotations: &[Annotation]) {
        for a in annotations {
            self.annotations.push(AnnotationEntry {
                image_id: entry.id.clone(),
                bbox: a.bbox,
                category_id: a.category_id,
                description: a.description.clone(),
                description_type: a.description_type,
            });
        }
        self.images.push(entry);
    }

    /// Same categories, no images or annotations.
    pub fn empty_like(&self) -> Self {
        Self {
            provenance: None,
            images: Vec::new(),
            annotations: Vec::new(),
            categories: self.categories.clone(),
        }
    }
}
