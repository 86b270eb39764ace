//! Box and mask geometry shared by every pipeline stage.
//!
//! Coordinates are integer pixels with a top-left origin. A box covers the
//! half-open pixel ranges `[x, x + w)` and `[y, y + h)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("box has non-positive size {w}x{h}")]
    DegenerateBox { w: u32, h: u32 },
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask buffer has {got} entries, expected {expected}")]
    MaskSize { expected: usize, got: usize },
}

/// Axis-aligned box with strictly positive width and height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self, GeometryError> {
        if w == 0 || h == 0 {
            return Err(GeometryError::DegenerateBox { w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    pub fn w(&self) -> u32 {
        self.w
    }

    pub fn h(&self) -> u32 {
        self.h
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> f64 {
        self.w as f64 * self.h as f64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn contains_pixel(&self, px: u32, py: u32) -> bool {
        px >= self.x && py >= self.y && (px as u64) < self.right() && (py as u64) < self.bottom()
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let ix = self.right().min(other.right()) as f64 - self.x.max(other.x) as f64;
        let iy = self.bottom().min(other.bottom()) as f64 - self.y.max(other.y) as f64;
        ix.max(0.0) * iy.max(0.0)
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Intersection over union using continuous box area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// True iff the two boxes share a region of positive area. Touching edges do
/// not count.
pub fn intersects(a: &BBox, b: &BBox) -> bool {
    a.intersection_area(b) > 0.0
}

/// Binary raster, row-major, `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, GeometryError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(GeometryError::MaskSize {
                expected,
                got: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Mask whose foreground is exactly the given box, clipped to the canvas.
    pub fn from_bbox(width: u32, height: u32, b: &BBox) -> Self {
        Self::from_fn(width, height, |x, y| b.contains_pixel(x, y))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Removes every foreground pixel that has a background (or off-canvas)
    /// 4-neighbour.
    pub fn eroded(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            self.get(x, y)
                && x > 0
                && y > 0
                && x + 1 < self.width
                && y + 1 < self.height
                && self.get(x - 1, y)
                && self.get(x + 1, y)
                && self.get(x, y - 1)
                && self.get(x, y + 1)
        })
    }
}

/// Tightest box containing every foreground pixel.
pub fn mask_to_bbox(m: &Mask) -> Result<BBox, GeometryError> {
    let (mut x0, mut y0) = (u32::MAX, u32::MAX);
    let (mut x1, mut y1) = (0u32, 0u32);
    let mut any = false;
    for (i, _) in m.bits.iter().enumerate().filter(|(_, b)| **b) {
        let x = (i % m.width as usize) as u32;
        let y = (i / m.width as usize) as u32;
        any = true;
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !any {
        return Err(GeometryError::EmptyMask);
    }
    BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// Candidate placement positions over an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionGrid {
    positions: Vec<(u32, u32)>,
}

impl PositionGrid {
    pub fn positions(&self) -> &[(u32, u32)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Deterministic lattice of exactly `n` positions: `ceil(sqrt(n))` columns,
/// `ceil(n / cols)` rows, each point at the centre of its lattice cell,
/// filled row-major and truncated to `n`.
pub fn candidate_grid(image_w: u32, image_h: u32, n: usize) -> PositionGrid {
    assert!(n >= 1, "candidate_grid needs at least one position");
    assert!(image_w > 0 && image_h > 0, "image dimensions must be positive");
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let pitch_x = image_w as f64 / cols as f64;
    let pitch_y = image_h as f64 / rows as f64;
    let mut positions = Vec::with_capacity(n);
    'outer: for r in 0..rows {
        let y = ((r as f64 + 0.5) * pitch_y).floor() as u32;
        for c in 0..cols {
            if positions.len() == n {
                break 'outer;
            }
            let x = ((c as f64 + 0.5) * pitch_x).floor() as u32;
            positions.push((x.min(image_w - 1), y.min(image_h - 1)));
        }
    }
    PositionGrid { positions }
}
