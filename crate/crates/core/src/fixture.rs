//! Deterministic synthetic corpus: coloured shapes on textured backgrounds,
//! with exact masks and tight boxes. Used by tests and the `fixture` command.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedImage, Annotation, AnnotationDoc, CategoryEntry, DescriptionType, ImageEntry};
use crate::corpus::{write_sample, CorpusError};
use crate::geometry::{intersects, mask_to_bbox, BBox, Mask};
use crate::provenance::Provenance;
use crate::seed::rng_for;

/// (id, name, colour, presence/absence phrasing)
const CATEGORIES: [(u32, &str, [u8; 3], DescriptionType); 6] = [
    (1, "red disc", [220, 40, 40], DescriptionType::Presence),
    (2, "green square", [40, 200, 60], DescriptionType::Presence),
    (3, "blue diamond", [40, 70, 220], DescriptionType::Presence),
    (4, "disc without yellow rim", [230, 210, 40], DescriptionType::Absence),
    (5, "square without stripes", [200, 60, 200], DescriptionType::Absence),
    (6, "diamond not in shadow", [40, 200, 210], DescriptionType::Absence),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub n_images: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            n_images: 20,
            width: 96,
            height: 72,
            seed: 7,
        }
    }
}

pub struct Fixture {
    pub doc: AnnotationDoc,
    pub samples: Vec<(AnnotatedImage, Vec<Mask>)>,
}

pub fn fixture_image_id(i: usize) -> String {
    format!("syn{i:04}")
}

fn shape_mask(cat: u32, w: u32, h: u32, b: &BBox) -> Mask {
    let (cx, cy) = (b.x() as f64 + b.w() as f64 / 2.0, b.y() as f64 + b.h() as f64 / 2.0);
    let (rx, ry) = (b.w() as f64 / 2.0, b.h() as f64 / 2.0);
    Mask::from_fn(w, h, |x, y| {
        if !b.contains_pixel(x, y) {
            return false;
        }
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        match cat % 3 {
            1 => dx * dx + dy * dy <= 1.0,
            2 => true,
            _ => dx.abs() + dy.abs() <= 1.0,
        }
    })
}

/// Image `i` of the corpus; independent of every other image.
pub fn synthetic_sample(spec: &FixtureSpec, i: usize) -> (AnnotatedImage, Vec<Mask>) {
    let id = fixture_image_id(i);
    let mut rng = rng_for(spec.seed, &format!("fixture/{id}"));
    let (w, h) = (spec.width, spec.height);
    let tint: [u8; 3] = [rng.gen_range(60..140), rng.gen_range(60..140), rng.gen_range(60..140)];
    let mut pixels = RgbImage::from_fn(w, h, |x, y| {
        let ripple = ((x * 7 + y * 13) % 23) as u8;
        Rgb([tint[0] + ripple, tint[1] + (x * 40 / w) as u8, tint[2] + (y * 40 / h) as u8])
    });

    // Every fourth image holds a single object.
    let wanted = if i % 4 == 0 { 1 } else { rng.gen_range(2..=3) };
    let mut annotations = Vec::new();
    let mut masks = Vec::new();
    let side_max = (w.min(h) / 3).max(4);
    for _ in 0..200 {
        if annotations.len() == wanted {
            break;
        }
        let (id_c, name, colour, dtype) = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        if annotations.iter().any(|a: &Annotation| a.category_id == id_c) {
            continue;
        }
        let bw = rng.gen_range(4..=side_max);
        let bh = rng.gen_range(4..=side_max);
        let cand = BBox::new(rng.gen_range(0..=w - bw), rng.gen_range(0..=h - bh), bw, bh).expect("positive");
        if annotations.iter().any(|a: &Annotation| intersects(&a.bbox, &cand)) {
            continue;
        }
        let m = shape_mask(id_c, w, h, &cand);
        let Ok(tight) = mask_to_bbox(&m) else { continue };
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) {
                    let shade = ((x + y) % 5) as u8 * 6;
                    pixels.put_pixel(x, y, Rgb(colour.map(|c| c.saturating_sub(shade))));
                }
            }
        }
        let mut a = Annotation::new(tight, id_c);
        a.description = Some(name.to_string());
        a.description_type = Some(dtype);
        annotations.push(a);
        masks.push(m);
    }
    (
        AnnotatedImage {
            source_id: id,
            pixels,
            annotations,
        },
        masks,
    )
}

pub fn synthetic_corpus(spec: &FixtureSpec) -> Fixture {
    let samples: Vec<_> = (0..spec.n_images).map(|i| synthetic_sample(spec, i)).collect();
    let mut doc = AnnotationDoc {
        categories: CATEGORIES
            .iter()
            .map(|(id, name, ..)| CategoryEntry {
                id: *id,
                name: name.to_string(),
            })
            .collect(),
        ..Default::default()
    };
    for (img, _) in &samples {
        let entry = ImageEntry {
            id: img.source_id.clone(),
            file: format!("images/{}.png", img.source_id),
            width: img.width(),
            height: img.height(),
        };
        doc.push_image(entry, &img.annotations);
    }
    Fixture { doc, samples }
}

/// Writes `annotations.json`, `images/` and `masks/` under `dir`.
pub fn write_fixture(fixture: &Fixture, dir: &Path, prov: &Provenance) -> Result<(), CorpusError> {
    for (img, masks) in &fixture.samples {
        write_sample(dir, img, Some(masks), prov)?;
    }
    let mut doc = fixture.doc.clone();
    doc.provenance = Some(prov.clone());
    doc.save(&dir.join("annotations.json"))?;
    Ok(())
}
