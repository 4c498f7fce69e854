//! Boxes, grid lookups, IoU and the label layout mask.
//!
//! All coordinates are normalized to the unit square. A pixel or grid cell is
//! "inside" a box when its center lies in the half-open extent
//! `[x0, x1) × [y0, y1)`; the same rule is shared by mask rasterization, grid
//! lookups and the test oracles so counts agree exactly.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in center format, normalized image units.
///
/// Stored unclipped; clipping to the unit square happens only when the box is
/// rasterized or used to crop pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        BBox::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn x0(&self) -> f64 {
        self.x - self.w / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.x + self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.y - self.h / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Half-open point membership.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        self.x0() <= px && px < self.x1() && self.y0() <= py && py < self.y1()
    }

    /// The part of the box inside the unit square, if any.
    pub fn clipped(&self) -> Option<BBox> {
        let x0 = self.x0().max(0.0);
        let y0 = self.y0().max(0.0);
        let x1 = self.x1().min(1.0);
        let y1 = self.y1().min(1.0);
        (x1 > x0 && y1 > y0).then(|| BBox {
            x: (x0 + x1) / 2.0,
            y: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    /// Grows the box by `factor` of its size on every side.
    pub fn expanded(&self, factor: f64) -> BBox {
        BBox {
            w: self.w * (1.0 + 2.0 * factor),
            h: self.h * (1.0 + 2.0 * factor),
            ..*self
        }
    }

    pub fn union_hull(&self, other: &BBox) -> BBox {
        let x0 = self.x0().min(other.x0());
        let y0 = self.y0().min(other.y0());
        let x1 = self.x1().max(other.x1());
        let y1 = self.y1().max(other.y1());
        BBox {
            x: (x0 + x1) / 2.0,
            y: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    /// Area from the corner coordinates, consistent with `intersection_area`.
    fn corner_area(&self) -> f64 {
        (self.x1() - self.x0()) * (self.y1() - self.y0())
    }

    fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.x1().min(other.x1()) - self.x0().max(other.x0());
        let ih = self.y1().min(other.y1()) - self.y0().max(other.y0());
        iw.max(0.0) * ih.max(0.0)
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

/// IoU without validation, for hot loops over boxes already known valid.
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.corner_area() + b.corner_area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Indices `k` in `0..n` whose sample point `(k + 0.5) / n` lies in `[lo, hi)`.
pub(crate) fn center_span(lo: f64, hi: f64, n: usize) -> Range<usize> {
    let inside = |k: usize| {
        let c = (k as f64 + 0.5) / n as f64;
        lo <= c && c < hi
    };
    let nf = n as f64;
    let guess = |v: f64| -> usize { ((v * nf - 0.5).ceil().max(0.0) as usize).min(n) };
    let mut start = guess(lo);
    let mut end = guess(hi);
    // settle float rounding at the edges against the exact predicate
    while start > 0 && inside(start - 1) {
        start -= 1;
    }
    while start < n && start < end && !inside(start) {
        start += 1;
    }
    while end < n && inside(end) {
        end += 1;
    }
    while end > start && !inside(end - 1) {
        end -= 1;
    }
    start..end.max(start)
}

/// Binary raster over the model input resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Value at row `v`, column `u`.
    pub fn get(&self, v: usize, u: usize) -> u8 {
        self.values[v * self.width + u]
    }

    /// Row-major values, each 0 or 1.
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn popcount(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    fn fill_box(&mut self, b: &BBox) {
        let cols = center_span(b.x0(), b.x1(), self.width);
        for v in center_span(b.y0(), b.y1(), self.height) {
            let row = v * self.width;
            self.values[row + cols.start..row + cols.end].fill(1);
        }
    }
}

/// Marks every pixel whose center falls inside at least one box.
pub fn rasterize_mask<'a, I>(boxes: I, height: usize, width: usize) -> Result<BinaryMask>
where
    I: IntoIterator<Item = &'a BBox>,
{
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("mask dimensions {height}x{width}")));
    }
    let mut mask = BinaryMask::zeros(height, width);
    for b in boxes {
        mask.fill_box(b);
    }
    Ok(mask)
}

/// Shape of one feature-map scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub scale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub i: usize,
    pub j: usize,
    pub scale: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, scale: usize) -> Self {
        Grid { rows, cols, scale }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_center(&self, c: GridCoord) -> (f64, f64) {
        (
            (c.j as f64 + 0.5) / self.cols as f64,
            (c.i as f64 + 0.5) / self.rows as f64,
        )
    }

    /// Cell containing a point, clamping the point into the unit square.
    pub fn cell_of_clamped(&self, x: f64, y: f64) -> GridCoord {
        let j = ((x.clamp(0.0, 1.0) * self.cols as f64).floor() as usize).min(self.cols - 1);
        let i = ((y.clamp(0.0, 1.0) * self.rows as f64).floor() as usize).min(self.rows - 1);
        GridCoord {
            i,
            j,
            scale: self.scale,
        }
    }

    pub fn index(&self, c: GridCoord) -> usize {
        c.i * self.cols + c.j
    }

    pub fn coord(&self, index: usize) -> GridCoord {
        GridCoord {
            i: index / self.cols,
            j: index % self.cols,
            scale: self.scale,
        }
    }
}

/// Floor mapping of a normalized point onto a grid.
pub fn grid_cell_of(point: (f64, f64), grid: &Grid) -> Result<GridCoord> {
    let (x, y) = point;
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid(format!("point ({x}, {y}) outside the unit square")));
    }
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    Ok(grid.cell_of_clamped(x, y))
}

/// Cells whose centers lie inside the box, in row-major order. Never empty:
/// when no center is covered the cell holding the box center is returned.
pub fn cells_in_box(b: &BBox, grid: &Grid) -> Vec<GridCoord> {
    let cols = center_span(b.x0(), b.x1(), grid.cols);
    let rows = center_span(b.y0(), b.y1(), grid.rows);
    let cells: Vec<GridCoord> = rows
        .flat_map(|i| {
            cols.clone().map(move |j| GridCoord {
                i,
                j,
                scale: grid.scale,
            })
        })
        .collect();
    if cells.is_empty() {
        vec![grid.cell_of_clamped(b.x, b.y)]
    } else {
        cells
    }
}
