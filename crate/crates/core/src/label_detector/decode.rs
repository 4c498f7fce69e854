//! Grid/anchor box parameterization shared by both detectors.

use crate::geometry::{BBox, Grid, GridCoord};
use crate::nn::Tensor;

/// Largest size logit used when decoding; keeps `exp` finite.
const MAX_SIZE_LOGIT: f64 = 20.0;
/// Center fractions are kept this far inside the open unit interval when
/// encoding so the logit stays finite.
const FRAC_EPS: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy on a logit, and its derivative.
pub fn bce_with_logit(z: f64, target: f64) -> (f64, f64) {
    (softplus(z) - target * z, sigmoid(z) - target)
}

/// Box from raw offsets `t = (tx, ty, tw, th)` at `cell` with anchor `prior`:
/// the center is the cell corner plus a sigmoid fraction of a cell, the size
/// the prior scaled by `exp`.
pub fn decode_box(t: [f64; 4], cell: GridCoord, grid: &Grid, prior: (f64, f64)) -> BBox {
    BBox {
        x: (cell.j as f64 + sigmoid(t[0])) / grid.cols as f64,
        y: (cell.i as f64 + sigmoid(t[1])) / grid.rows as f64,
        w: prior.0 * t[2].min(MAX_SIZE_LOGIT).exp(),
        h: prior.1 * t[3].min(MAX_SIZE_LOGIT).exp(),
    }
}

/// Center offset of `b` within `cell`, in cells.
pub fn cell_fraction(b: &BBox, cell: GridCoord, grid: &Grid) -> (f64, f64) {
    (b.x * grid.cols as f64 - cell.j as f64, b.y * grid.rows as f64 - cell.i as f64)
}

/// Inverse of [`decode_box`] for a box whose center lies in `cell`.
pub fn encode_box(b: &BBox, cell: GridCoord, grid: &Grid, prior: (f64, f64)) -> [f64; 4] {
    let (fx, fy) = cell_fraction(b, cell, grid);
    [
        logit(fx.clamp(FRAC_EPS, 1.0 - FRAC_EPS)),
        logit(fy.clamp(FRAC_EPS, 1.0 - FRAC_EPS)),
        (b.w / prior.0).ln(),
        (b.h / prior.1).ln(),
    ]
}

/// IoU of two sizes with aligned centers.
pub fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

/// Raw head output at one scale, laid out as the head convolution emits it:
/// channel `anchor * fields + field`, then rows, then columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub grid: Grid,
    pub priors: Vec<(f64, f64)>,
    pub fields: usize,
    pub values: Vec<f64>,
}

impl PredictionMap {
    pub fn zeros(grid: Grid, priors: Vec<(f64, f64)>, fields: usize) -> Self {
        let n = priors.len() * fields * grid.len();
        PredictionMap {
            grid,
            priors,
            fields,
            values: vec![0.0; n],
        }
    }

    pub fn from_tensor(t: &Tensor, grid: Grid, priors: Vec<(f64, f64)>, fields: usize) -> Self {
        assert_eq!(t.c, priors.len() * fields, "head channel count");
        assert_eq!((t.h, t.w), (grid.rows, grid.cols), "head grid shape");
        PredictionMap {
            grid,
            priors,
            fields,
            values: t.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn to_tensor(&self, values: &[f64]) -> Tensor {
        Tensor::from_vec(
            self.priors.len() * self.fields,
            self.grid.rows,
            self.grid.cols,
            values.iter().map(|&v| v as f32).collect(),
        )
    }

    #[inline]
    pub fn index(&self, anchor: usize, field: usize, cell: GridCoord) -> usize {
        ((anchor * self.fields + field) * self.grid.rows + cell.i) * self.grid.cols + cell.j
    }

    #[inline]
    pub fn get(&self, anchor: usize, field: usize, cell: GridCoord) -> f64 {
        self.values[self.index(anchor, field, cell)]
    }

    pub fn set(&mut self, anchor: usize, field: usize, cell: GridCoord, v: f64) {
        let k = self.index(anchor, field, cell);
        self.values[k] = v;
    }

    pub fn offsets(&self, anchor: usize, cell: GridCoord) -> [f64; 4] {
        std::array::from_fn(|f| self.get(anchor, f, cell))
    }

    pub fn decode(&self, anchor: usize, cell: GridCoord) -> BBox {
        decode_box(self.offsets(anchor, cell), cell, &self.grid, self.priors[anchor])
    }

    pub fn cells(&self) -> impl Iterator<Item = GridCoord> + '_ {
        (0..self.grid.len()).map(|k| self.grid.coord(k))
    }
}
