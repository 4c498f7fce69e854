//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Three operations: render a synthetic compound figure, show the label
//! mask with the grid cells each label selects, and score a user-drawn box
//! against the ground-truth subfigures.

use figsep::dataset::glyph::GlyphRanges;
use figsep::dataset::{generate_synthetic_figure, Alphabet, FigureRecord, LabelPosition, SyntheticLayoutSpec};
use figsep::geometry::{iou, BBox, Grid};
use figsep::subfigure_detector::{build_mask, select_cells};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: figsep::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Figure {
    record: FigureRecord,
    alphabet: Alphabet,
}

#[wasm_bindgen]
impl Figure {
    /// `position` is one of `corner`, `above`, `below`.
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, n_subfigures: usize, position: &str, size: u32, seed: u32) -> Result<Figure, JsError> {
        let label_position = match position {
            "corner" => LabelPosition::Corner,
            "above" => LabelPosition::Above,
            "below" => LabelPosition::Below,
            other => return Err(JsError::new(&format!("unknown label position `{other}`"))),
        };
        let alphabet = Alphabet::lowercase(26);
        let spec = SyntheticLayoutSpec {
            rows,
            cols,
            jitter: 0.08,
            n_subfigures,
            label_position,
            alphabet: alphabet.classes().to_vec(),
            width: size,
            height: size,
            glyphs: GlyphRanges::default(),
        };
        let record = generate_synthetic_figure(&spec, seed as u64).map_err(js_err)?;
        Ok(Figure { record, alphabet })
    }

    pub fn width(&self) -> u32 {
        self.record.width()
    }

    pub fn height(&self) -> u32 {
        self.record.height()
    }

    /// RGBA bytes for an `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.record
            .image
            .pixels()
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect()
    }

    /// Ground-truth labels and subfigures as JSON, boxes in pixel corners.
    pub fn annotations(&self) -> String {
        let (w, h) = (self.width() as f64, self.height() as f64);
        let px = |b: &BBox| [b.x0() * w, b.y0() * h, b.x1() * w, b.y1() * h];
        let glyph = |c: u32| self.alphabet.glyph(c).unwrap_or("?").to_string();
        json!({
            "labels": self.record.label_boxes.iter()
                .map(|l| json!({"class": glyph(l.class), "box": px(&l.bbox)}))
                .collect::<Vec<_>>(),
            "subfigures": self.record.subfig_boxes.iter()
                .map(|s| json!({"class": glyph(s.class), "box": px(&s.bbox)}))
                .collect::<Vec<_>>(),
        })
        .to_string()
    }

    /// Label mask at `resolution`² (one byte per pixel, 0/1), the network's
    /// fourth input channel.
    pub fn mask(&self, resolution: usize) -> Result<Vec<u8>, JsError> {
        Ok(build_mask(&self.record.gt_labels(), resolution).map_err(js_err)?.values().to_vec())
    }

    /// Cells each label selects on a grid of the given stride:
    /// `{"rows", "cols", "selections": [{"class", "cells": [[i, j]..], "representative": [i, j]}]}`.
    pub fn cells(&self, stride: u32) -> Result<String, JsError> {
        if stride == 0 || self.width() % stride != 0 || self.height() % stride != 0 {
            return Err(JsError::new("stride must divide the figure size"));
        }
        let grid = Grid::new((self.height() / stride) as usize, (self.width() / stride) as usize, 0);
        let sel = select_cells(&self.record.gt_labels(), &grid);
        Ok(json!({
            "rows": grid.rows,
            "cols": grid.cols,
            "selections": sel.iter().map(|s| json!({
                "class": self.alphabet.glyph(s.label.class).unwrap_or("?"),
                "cells": s.cells.iter().map(|c| [c.i, c.j]).collect::<Vec<_>>(),
                "representative": [s.representative.i, s.representative.j],
            })).collect::<Vec<_>>(),
        })
        .to_string())
    }

    /// IoU of a pixel-corner box against every subfigure, best first.
    pub fn score_box(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<String, JsError> {
        let (w, h) = (self.width() as f64, self.height() as f64);
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        let b = BBox::from_corners(x0 / w, y0 / h, x1 / w, y1 / h).map_err(js_err)?;
        let mut scores = self
            .record
            .subfig_boxes
            .iter()
            .map(|s| Ok((self.alphabet.glyph(s.class).unwrap_or("?"), iou(&b, &s.bbox)?)))
            .collect::<figsep::Result<Vec<_>>>()
            .map_err(js_err)?;
        scores.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(json!(scores.iter().map(|(c, v)| json!({"class": c, "iou": v})).collect::<Vec<_>>()).to_string())
    }
}
