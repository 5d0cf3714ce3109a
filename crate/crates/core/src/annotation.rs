//! Bounding boxes to patch-level weak labels, and tight boxes from pixel
//! masks.

use serde::{Deserialize, Serialize};

use crate::error::{PromiError, Result};
use crate::mask::SegmentationMask;

/// Axis-aligned pixel box, min inclusive and max exclusive. Serialized as
/// `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl From<[usize; 4]> for BoundingBox {
    fn from([x_min, y_min, x_max, y_max]: [usize; 4]) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }
}

impl From<BoundingBox> for [usize; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BoundingBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn area(&self) -> usize {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn validate(&self, image_h: usize, image_w: usize) -> Result<()> {
        if self.x_min >= self.x_max || self.y_min >= self.y_max || self.x_max > image_w || self.y_max > image_h {
            return Err(PromiError::Annotation(format!(
                "box {:?} is empty or outside a {image_h}x{image_w} image",
                <[usize; 4]>::from(*self)
            )));
        }
        Ok(())
    }
}

/// Per-patch weak labels: 1 = box-covered (noisy foreground), 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchLabelGrid {
    grid_h: usize,
    grid_w: usize,
    labels: Vec<u8>,
}

impl PatchLabelGrid {
    pub fn new(grid_h: usize, grid_w: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != grid_h * grid_w {
            return Err(PromiError::Shape(format!(
                "label grid {grid_h}x{grid_w} needs {} entries, got {}",
                grid_h * grid_w,
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(PromiError::Annotation("patch labels must be 0 or 1".into()));
        }
        Ok(Self { grid_h, grid_w, labels })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.grid_w + col]
    }

    pub fn count_foreground(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// First pixel row (or column) that maps to patch `index` under
/// `patch = floor(pixel * grid / image)`.
fn first_pixel(index: usize, image: usize, grid: usize) -> usize {
    (index * image).div_ceil(grid)
}

/// Labels a patch 1 when at least half of its pixels fall inside the union
/// of `boxes`.
pub fn boxes_to_patch_labels(
    boxes: &[BoundingBox],
    image_h: usize,
    image_w: usize,
    grid_h: usize,
    grid_w: usize,
) -> Result<PatchLabelGrid> {
    if grid_h == 0 || grid_w == 0 || image_h == 0 || image_w == 0 {
        return Err(PromiError::Shape("grid and image dimensions must be positive".into()));
    }
    for b in boxes {
        b.validate(image_h, image_w)?;
    }
    if boxes.is_empty() {
        return PatchLabelGrid::new(grid_h, grid_w, vec![0; grid_h * grid_w]);
    }

    // Union coverage, then a 2-D prefix sum to count covered pixels per patch.
    let mut covered = vec![0u8; image_h * image_w];
    for b in boxes {
        for y in b.y_min..b.y_max {
            covered[y * image_w + b.x_min..y * image_w + b.x_max].fill(1);
        }
    }
    let stride = image_w + 1;
    let mut prefix = vec![0u64; (image_h + 1) * stride];
    for y in 0..image_h {
        let mut row = 0u64;
        for x in 0..image_w {
            row += u64::from(covered[y * image_w + x]);
            prefix[(y + 1) * stride + x + 1] = prefix[y * stride + x + 1] + row;
        }
    }
    let rect_sum = |y0: usize, x0: usize, y1: usize, x1: usize| {
        prefix[y1 * stride + x1] + prefix[y0 * stride + x0] - prefix[y0 * stride + x1] - prefix[y1 * stride + x0]
    };

    let mut labels = Vec::with_capacity(grid_h * grid_w);
    for r in 0..grid_h {
        let (y0, y1) = (first_pixel(r, image_h, grid_h), first_pixel(r + 1, image_h, grid_h));
        for c in 0..grid_w {
            let (x0, x1) = (first_pixel(c, image_w, grid_w), first_pixel(c + 1, image_w, grid_w));
            let total = ((y1 - y0) * (x1 - x0)) as u64;
            let inside = rect_sum(y0, x0, y1, x1);
            // Patches that own no pixel (grid finer than image) stay background.
            labels.push(u8::from(total > 0 && 2 * inside >= total));
        }
    }
    PatchLabelGrid::new(grid_h, grid_w, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbours(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(PromiError::Config(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }
}

/// One tight box per connected foreground component, in raster order of
/// each component's first pixel. Components with fewer than
/// `min_component_px` pixels are dropped.
pub fn mask_to_tight_boxes(
    mask: &SegmentationMask,
    connectivity: Connectivity,
    min_component_px: usize,
) -> Vec<BoundingBox> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();

    for start in 0..h * w {
        if seen[start] || mask.data()[start] == 0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x_min, mut y_min, mut x_max, mut y_max) = (w, h, 0, 0);
        let mut size = 0usize;

        while let Some(idx) = stack.pop() {
            let (y, x) = (idx / w, idx % w);
            size += 1;
            x_min = x_min.min(x);
            y_min = y_min.min(y);
            x_max = x_max.max(x + 1);
            y_max = y_max.max(y + 1);

            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if (dy == 0 && dx == 0) || (connectivity == Connectivity::Four && dy != 0 && dx != 0) {
                        continue;
                    }
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if !seen[n] && mask.data()[n] != 0 {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }

        if size >= min_component_px.max(1) {
            boxes.push(BoundingBox::new(x_min, y_min, x_max, y_max));
        }
    }
    boxes
}
