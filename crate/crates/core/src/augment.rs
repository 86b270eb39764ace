//! Categorical augmentation: paste an object of a category the image does not
//! yet contain onto a free grid position, shrinking the object when the image
//! is too crowded and giving up on the image after a bounded number of
//! shrink steps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotatedImage, Annotation};
use crate::geometry::{candidate_grid, intersects, BBox, PositionGrid};
use crate::raster::{paint, ObjectCutout, RasterError};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("donor pool is empty")]
    EmptyDonorPool,
    #[error("invalid augmentation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Number of candidate positions on the placement grid.
    pub n_positions: usize,
    /// Each resize divides width and height by this factor.
    pub alpha: f64,
    /// Maximum number of resize steps before the image is skipped.
    pub n_r: u32,
    /// Fewer free positions than this triggers a resize.
    pub min_free_positions: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            n_positions: 100,
            alpha: 2.0,
            n_r: 2,
            min_free_positions: 5,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.n_positions == 0 {
            return Err(AugmentError::InvalidParams("n_positions must be >= 1".into()));
        }
        if !(self.alpha > 1.0) {
            return Err(AugmentError::InvalidParams(format!(
                "alpha must be > 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Grid positions where a `w`x`h` box anchored at its top-left stays on the
/// canvas and overlaps no existing annotation box.
pub fn free_positions(img: &AnnotatedImage, w: u32, h: u32, grid: &PositionGrid) -> Vec<(u32, u32)> {
    grid.positions()
        .iter()
        .copied()
        .filter(|&(x, y)| {
            let Ok(candidate) = BBox::new(x, y, w, h) else {
                return false;
            };
            candidate.fits_within(img.width(), img.height())
                && img.annotations.iter().all(|a| !intersects(&candidate, &a.bbox))
        })
        .collect()
}

/// Uniformly random free position, or `None` if the grid has none.
pub fn find_placement<R: Rng + ?Sized>(
    img: &AnnotatedImage,
    cutout_w: u32,
    cutout_h: u32,
    grid: &PositionGrid,
    rng: &mut R,
) -> Option<(u32, u32)> {
    free_positions(img, cutout_w, cutout_h, grid)
        .choose(rng)
        .copied()
}

/// Pastes `cutout` with its top-left at `pos` and appends its annotation.
pub fn place_object(
    img: &AnnotatedImage,
    cutout: &ObjectCutout,
    pos: (u32, u32),
) -> Result<AnnotatedImage, AugmentError> {
    let mut out = img.clone();
    paint(&mut out.pixels, cutout, pos)?;
    let bbox = BBox::new(pos.0, pos.1, cutout.width(), cutout.height())
        .expect("cutout dimensions are positive");
    out.annotations.push(Annotation::new(bbox, cutout.category_id()));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    /// Still too few free positions after `n_r` resizes.
    ResizeExhausted,
    /// Every donor belongs to a category already in the image.
    NoEligibleDonor,
    /// The donor shrank below one opaque pixel.
    DonorVanished,
}

/// One placement attempt: the object size tried and how many grid positions
/// were free for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementAttempt {
    pub width: u32,
    pub height: u32,
    pub free_positions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentOutcome {
    Augmented {
        image: AnnotatedImage,
        donor_index: usize,
        /// The object as pasted, after any resizing.
        inserted: ObjectCutout,
        position: (u32, u32),
        attempts: Vec<PlacementAttempt>,
    },
    Skipped {
        reason: SkipReason,
        attempts: Vec<PlacementAttempt>,
    },
}

impl AugmentOutcome {
    pub fn attempts(&self) -> &[PlacementAttempt] {
        match self {
            AugmentOutcome::Augmented { attempts, .. } | AugmentOutcome::Skipped { attempts, .. } => attempts,
        }
    }
}

/// Size after `step` resizes: `native / alpha^step`, at least one pixel.
pub fn resized_dims(native_w: u32, native_h: u32, alpha: f64, step: u32) -> (u32, u32) {
    let f = alpha.powi(step as i32);
    let w = ((native_w as f64 / f).round() as u32).max(1);
    let h = ((native_h as f64 / f).round() as u32).max(1);
    (w, h)
}

/// Inserts one donor object from a category absent in `img`.
///
/// Donors whose category already occurs in the image are not eligible. The
/// donor is drawn uniformly from the eligible ones. Attempt `t` (for `t` in
/// `0..=n_r`) uses the donor at `native / alpha^t`; an attempt succeeds when
/// at least `min_free_positions` grid points are free, and the position is
/// then drawn uniformly among them.
pub fn categorical_augment(
    img: &AnnotatedImage,
    donor_pool: &[ObjectCutout],
    params: &AugmentParams,
) -> Result<AugmentOutcome, AugmentError> {
    params.validate()?;
    if donor_pool.is_empty() {
        return Err(AugmentError::EmptyDonorPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let present = img.categories();
    let eligible: Vec<usize> = donor_pool
        .iter()
        .enumerate()
        .filter(|(_, d)| !present.contains(&d.category_id()))
        .map(|(i, _)| i)
        .collect();
    let Some(&donor_index) = eligible.choose(&mut rng) else {
        return Ok(AugmentOutcome::Skipped {
            reason: SkipReason::NoEligibleDonor,
            attempts: Vec::new(),
        });
    };
    let donor = &donor_pool[donor_index];
    let grid = candidate_grid(img.width(), img.height(), params.n_positions);
    let mut attempts = Vec::new();

    for step in 0..=params.n_r {
        let candidate = if step == 0 {
            donor.clone()
        } else {
            let (w, h) = resized_dims(donor.width(), donor.height(), params.alpha, step);
            match donor.resized(w, h) {
                Some(c) => c,
                None => {
                    return Ok(AugmentOutcome::Skipped {
                        reason: SkipReason::DonorVanished,
                        attempts,
                    })
                }
            }
        };
        let free = free_positions(img, candidate.width(), candidate.height(), &grid);
        attempts.push(PlacementAttempt {
            width: candidate.width(),
            height: candidate.height(),
            free_positions: free.len(),
        });
        if !free.is_empty() && free.len() >= params.min_free_positions {
            let position = *free.choose(&mut rng).expect("non-empty");
            let image = place_object(img, &candidate, position)?;
            return Ok(AugmentOutcome::Augmented {
                image,
                donor_index,
                inserted: candidate,
                position,
                attempts,
            });
        }
    }
    Ok(AugmentOutcome::Skipped {
        reason: SkipReason::ResizeExhausted,
        attempts,
    })
}
