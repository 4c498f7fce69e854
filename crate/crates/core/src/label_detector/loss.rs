//! Anchor-assignment detection loss with analytic gradients on the raw head
//! outputs.

use serde::{Deserialize, Serialize};

use super::decode::{bce_with_logit, cell_fraction, sigmoid, shape_iou, PredictionMap};
use crate::dataset::LabeledBox;
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox, GridCoord};

/// Field layout of one anchor's prediction.
pub const TX: usize = 0;
pub const TY: usize = 1;
pub const TW: usize = 2;
pub const TH: usize = 3;
pub const OBJ: usize = 4;
pub const BOX_FIELDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the confidence term.
    pub lambda: f64,
    /// Unassigned predictions overlapping a ground truth above this IoU are
    /// not pushed towards zero confidence.
    pub ignore_iou: f64,
}

/// Loss value split into terms, plus the gradient for every map value.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Box regression on the assigned predictions.
    pub l1: f64,
    /// Confidence cross-entropy (unweighted).
    pub l2: f64,
    /// Per-class cross-entropy; zero for class-agnostic maps.
    pub l_cls: f64,
    pub total: f64,
    pub grads: Vec<Vec<f64>>,
}

/// A ground truth's responsible prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub scale: usize,
    pub anchor: usize,
    pub cell: GridCoord,
    pub gt: usize,
}

/// Each ground truth goes to the anchor (over all scales) whose prior shape
/// overlaps it most, at the cell containing its center. When two ground
/// truths land on the same slot the later one wins.
pub fn assign(maps: &[PredictionMap], gts: &[BBox]) -> Vec<Assignment> {
    let mut out: Vec<Assignment> = Vec::with_capacity(gts.len());
    for (g, b) in gts.iter().enumerate() {
        let mut best = (0, 0);
        let mut best_iou = -1.0;
        for (s, m) in maps.iter().enumerate() {
            for (a, &p) in m.priors.iter().enumerate() {
                let v = shape_iou((b.w, b.h), p);
                if v > best_iou {
                    best_iou = v;
                    best = (s, a);
                }
            }
        }
        let (scale, anchor) = best;
        let cell = maps[scale].grid.cell_of_clamped(b.x, b.y);
        out.retain(|o| !(o.scale == scale && o.anchor == anchor && o.cell == cell));
        out.push(Assignment { scale, anchor, cell, gt: g });
    }
    out
}

fn validate_gts(gts: &[BBox]) -> Result<()> {
    for b in gts {
        b.validate()?;
    }
    Ok(())
}

/// Class-agnostic loss: `L1 + λ·L2`. Only box geometry enters, so label
/// classes cannot influence it.
pub fn localization_loss(maps: &[PredictionMap], gts: &[BBox], cfg: &LossConfig) -> Result<LossOutput> {
    detection_loss(maps, gts, None, cfg)
}

/// Loss of a detector that also predicts classes: the localization terms
/// plus a per-class cross-entropy at the assigned predictions.
pub fn end_to_end_loss(maps: &[PredictionMap], gts: &[LabeledBox], cfg: &LossConfig) -> Result<LossOutput> {
    let boxes: Vec<BBox> = gts.iter().map(|g| g.bbox).collect();
    let classes: Vec<u32> = gts.iter().map(|g| g.class).collect();
    detection_loss(maps, &boxes, Some(&classes), cfg)
}

fn detection_loss(
    maps: &[PredictionMap],
    gts: &[BBox],
    classes: Option<&[u32]>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    validate_gts(gts)?;
    if let Some(cls) = classes {
        for m in maps {
            let n = m.fields - BOX_FIELDS;
            if let Some(&bad) = cls.iter().find(|&&c| c == 0 || c as usize > n) {
                return Err(Error::invalid(format!("class {bad} outside 1..={n}")));
            }
        }
    }
    let assignments = assign(maps, gts);
    let mut grads: Vec<Vec<f64>> = maps.iter().map(|m| vec![0.0; m.values.len()]).collect();
    let mut positive: Vec<Vec<bool>> = maps
        .iter()
        .map(|m| vec![false; m.priors.len() * m.grid.len()])
        .collect();
    let (mut l1, mut l2, mut l_cls) = (0.0, 0.0, 0.0);

    for a in &assignments {
        let m = &maps[a.scale];
        let g = &mut grads[a.scale];
        let b = &gts[a.gt];
        positive[a.scale][a.anchor * m.grid.len() + m.grid.index(a.cell)] = true;
        let (fx, fy) = cell_fraction(b, a.cell, &m.grid);
        for (field, target) in [(TX, fx), (TY, fy)] {
            let k = m.index(a.anchor, field, a.cell);
            let s = sigmoid(m.values[k]);
            l1 += (s - target).powi(2);
            g[k] += 2.0 * (s - target) * s * (1.0 - s);
        }
        let prior = m.priors[a.anchor];
        for (field, target) in [(TW, (b.w / prior.0).ln()), (TH, (b.h / prior.1).ln())] {
            let k = m.index(a.anchor, field, a.cell);
            let d = m.values[k] - target;
            l1 += d * d;
            g[k] += 2.0 * d;
        }
        if let Some(cls) = classes {
            for c in 0..m.fields - BOX_FIELDS {
                let k = m.index(a.anchor, BOX_FIELDS + c, a.cell);
                let y = if cls[a.gt] as usize == c + 1 { 1.0 } else { 0.0 };
                let (l, d) = bce_with_logit(m.values[k], y);
                l_cls += l;
                g[k] += d;
            }
        }
    }

    for (s, m) in maps.iter().enumerate() {
        for anchor in 0..m.priors.len() {
            for cell in m.cells() {
                let k = m.index(anchor, OBJ, cell);
                let target = if positive[s][anchor * m.grid.len() + m.grid.index(cell)] {
                    1.0
                } else {
                    let pred = m.decode(anchor, cell);
                    if gts.iter().any(|g| iou_unchecked(&pred, g) > cfg.ignore_iou) {
                        continue;
                    }
                    0.0
                };
                let (l, d) = bce_with_logit(m.values[k], target);
                l2 += l;
                grads[s][k] += cfg.lambda * d;
            }
        }
    }

    Ok(LossOutput {
        l1,
        l2,
        l_cls,
        total: l1 + cfg.lambda * l2 + l_cls,
        grads,
    })
}
