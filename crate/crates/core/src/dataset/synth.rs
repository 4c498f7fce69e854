//! Synthetic compound figures with exact label and subfigure ground truth.
//!
//! Panels are laid out on a jittered grid and filled with gradients, shape
//! collages, line plots, bar charts, heat maps or speckled "micrographs".
//! Plot-style panels sit on white, so their borders are often invisible and
//! only the label tells where one subfigure ends and the next begins.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::glyph::{self, GlyphRanges};
use super::{Alphabet, FigureRecord, ImbalanceProfile, LabelClass, LabeledBox, SubfigureBox};
use crate::error::{Error, Result};
use crate::raster::{draw_line, fill_disc, fill_rect, stroke_rect, PixelRect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPosition {
    /// Inside the panel, at its top-left corner.
    Corner,
    /// In a strip above the panel.
    Above,
    /// In a strip below the panel.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayoutSpec {
    pub rows: usize,
    pub cols: usize,
    /// Per-edge random inset, as a fraction of the grid cell size.
    pub jitter: f64,
    pub n_subfigures: usize,
    pub label_position: LabelPosition,
    /// Labels are assigned in reading order from the front of this list.
    pub alphabet: Vec<LabelClass>,
    pub width: u32,
    pub height: u32,
    pub glyphs: GlyphRanges,
}

impl SyntheticLayoutSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("layout needs at least one row and column"));
        }
        if self.n_subfigures == 0 || self.n_subfigures > self.rows * self.cols {
            return Err(Error::invalid(format!(
                "{} subfigures do not fit a {}x{} grid",
                self.n_subfigures, self.rows, self.cols
            )));
        }
        if self.alphabet.len() < self.n_subfigures {
            return Err(Error::invalid(format!(
                "alphabet has {} classes but {} subfigures need labels",
                self.alphabet.len(),
                self.n_subfigures
            )));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::invalid("jitter must lie in [0, 0.5)"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::invalid("canvas must be at least 16x16"));
        }
        Ok(())
    }
}

/// Renders one figure; a pure function of `(spec, seed)`.
pub fn generate_synthetic_figure(spec: &SyntheticLayoutSpec, seed: u64) -> Result<FigureRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let mut image = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let margin = ((w.min(h) as f64) * 0.02).round().max(1.0);
    let cell_w = (w as f64 - 2.0 * margin) / spec.cols as f64;
    let cell_h = (h as f64 - 2.0 * margin) / spec.rows as f64;
    let gap = rng.gen_range(0.03..0.08);

    let mut label_boxes = Vec::with_capacity(spec.n_subfigures);
    let mut subfig_boxes = Vec::with_capacity(spec.n_subfigures);
    for k in 0..spec.n_subfigures {
        let (r, c) = (k / spec.cols, k % spec.cols);
        let last = k + 1 == spec.n_subfigures;
        let span = if last { spec.cols - c } else { 1 };
        let mut inset = |extent: f64| extent * (gap / 2.0 + rng.gen_range(0.0..=spec.jitter));
        let x0 = margin + c as f64 * cell_w + inset(cell_w);
        let x1 = margin + (c + span) as f64 * cell_w - inset(cell_w);
        let y0 = margin + r as f64 * cell_h + inset(cell_h);
        let y1 = margin + (r + 1) as f64 * cell_h - inset(cell_h);

        let class = &spec.alphabet[k];
        let look = spec.glyphs.sample(&class.glyph, &mut rng);
        let mut bitmap = glyph::render(&look.text, look.scale, look.style);
        let mut cell = PixelRect {
            x0: x0.round() as u32,
            y0: y0.round() as u32,
            x1: (x1.round() as u32).min(w),
            y1: (y1.round() as u32).min(h),
        };
        if cell.width() < 6 || cell.height() < 6 {
            return Err(Error::invalid("panels too small for the canvas"));
        }
        // keep the label small relative to its panel
        let max_side = (cell.width().min(cell.height()) / 3).max(5);
        if bitmap.width > max_side * 2 || bitmap.height > max_side {
            bitmap = glyph::render(&look.text, 1.0, look.style);
        }
        let strip = bitmap.height + 3;
        let content = match spec.label_position {
            LabelPosition::Corner => cell,
            LabelPosition::Above => PixelRect {
                y0: (cell.y0 + strip).min(cell.y1 - 4),
                ..cell
            },
            LabelPosition::Below => PixelRect {
                y1: cell.y1.saturating_sub(strip).max(cell.y0 + 4),
                ..cell
            },
        };
        paint_panel(&mut image, &content, &mut rng);
        cell = content;

        let dx = rng.gen_range(1..=3u32);
        let (lx, ly) = match spec.label_position {
            LabelPosition::Corner => (cell.x0 + dx, cell.y0 + rng.gen_range(1..=3u32)),
            LabelPosition::Above => (cell.x0 + dx, cell.y0.saturating_sub(bitmap.height + rng.gen_range(1..=2u32))),
            LabelPosition::Below => (cell.x0 + dx, (cell.y1 + rng.gen_range(1..=2u32)).min(h - bitmap.height.min(h))),
        };
        let ink_area = PixelRect {
            x0: lx,
            y0: ly,
            x1: (lx + bitmap.width).min(w),
            y1: (ly + bitmap.height).min(h),
        };
        let color = glyph::contrasting_color(&image, &ink_area, &mut rng);
        let ink = glyph::stamp(&mut image, &bitmap, lx, ly, color);
        let label_rect = PixelRect {
            x0: ink.x0.saturating_sub(1),
            y0: ink.y0.saturating_sub(1),
            x1: (ink.x1 + 1).min(w),
            y1: (ink.y1 + 1).min(h),
        };
        let subfig_rect = content.union(&label_rect);
        label_boxes.push(LabeledBox {
            bbox: label_rect.to_bbox(w, h),
            class: class.id,
            confidence: 1.0,
        });
        subfig_boxes.push(SubfigureBox {
            bbox: subfig_rect.to_bbox(w, h),
            class: class.id,
        });
    }
    let record = FigureRecord {
        image_id: format!("synth_{seed}"),
        image,
        label_boxes,
        subfig_boxes,
    };
    record.validate()?;
    Ok(record)
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> Rgb<u8> {
    Rgb([rng.gen(), rng.gen(), rng.gen()])
}

fn light_color<R: Rng + ?Sized>(rng: &mut R) -> Rgb<u8> {
    Rgb([rng.gen_range(200..=255), rng.gen_range(200..=255), rng.gen_range(200..=255)])
}

fn paint_panel<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) {
    match rng.gen_range(0..6) {
        0 => paint_gradient(image, r, rng),
        1 => paint_shapes(image, r, rng),
        2 => paint_line_plot(image, r, rng),
        3 => paint_bars(image, r, rng),
        4 => paint_heatmap(image, r, rng),
        _ => paint_micrograph(image, r, rng),
    }
    if rng.gen_bool(0.3) {
        stroke_rect(image, r, Rgb([40, 40, 40]));
    }
}

fn paint_gradient<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) {
    let (a, b) = (random_color(rng), random_color(rng));
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (cx, cy) = (theta.cos(), theta.sin());
    let norm = (r.width() as f64 * cx.abs() + r.height() as f64 * cy.abs()).max(1.0);
    let offset = if cx < 0.0 { -(r.width() as f64) * cx } else { 0.0 } + if cy < 0.0 { -(r.height() as f64) * cy } else { 0.0 };
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let t = (((x - r.x0) as f64 * cx + (y - r.y0) as f64 * cy + offset) / norm).clamp(0.0, 1.0);
            let px = Rgb([0, 1, 2].map(|c| (a[c] as f64 * (1.0 - t) + b[c] as f64 * t) as u8));
            image.put_pixel(x, y, px);
        }
    }
}

fn paint_shapes<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) {
    let bg = if rng.gen_bool(0.5) { light_color(rng) } else { random_color(rng) };
    fill_rect(image, r, bg);
    let n = rng.gen_range(3..9);
    let (w, h) = (r.width() as f64, r.height() as f64);
    for _ in 0..n {
        let color = random_color(rng);
        let cx = r.x0 as f64 + rng.gen_range(0.0..w);
        let cy = r.y0 as f64 + rng.gen_range(0.0..h);
        let size = rng.gen_range(0.08..0.3) * w.min(h);
        if rng.gen_bool(0.5) {
            fill_disc(image, cx, cy, size, color, r);
        } else {
            let rect = PixelRect {
                x0: (cx - size).max(r.x0 as f64) as u32,
                y0: (cy - size * 0.7).max(r.y0 as f64) as u32,
                x1: (cx + size).min(r.x1 as f64) as u32,
                y1: (cy + size * 0.7).min(r.y1 as f64) as u32,
            };
            if rect.x1 > rect.x0 && rect.y1 > rect.y0 {
                fill_rect(image, &rect, color);
            }
        }
    }
}

/// Axes at 15 % insets; returns the plotting area.
fn draw_axes<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) -> PixelRect {
    let axis = Rgb([30, 30, 30]);
    let left = r.x0 + (r.width() as f64 * rng.gen_range(0.12..0.2)) as u32;
    let bottom = r.y1 - (r.height() as f64 * rng.gen_range(0.12..0.2)) as u32 - 1;
    let top = r.y0 + (r.height() as f64 * 0.08) as u32;
    let right = r.x1 - (r.width() as f64 * 0.05) as u32 - 1;
    draw_line(image, (left as i64, top as i64), (left as i64, bottom as i64), axis, r);
    draw_line(image, (left as i64, bottom as i64), (right as i64, bottom as i64), axis, r);
    let ticks = rng.gen_range(3..6);
    for t in 1..=ticks {
        let tx = left + (right - left) * t / ticks;
        draw_line(image, (tx as i64, bottom as i64), (tx as i64, bottom as i64 + 2), axis, r);
        let ty = bottom - (bottom - top) * t / ticks;
        draw_line(image, (left as i64 - 2, ty as i64), (left as i64, ty as i64), axis, r);
    }
    PixelRect {
        x0: left + 1,
        y0: top,
        x1: right.max(left + 2),
        y1: bottom.max(top + 2),
    }
}

fn paint_line_plot<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) {
    let bg = if rng.gen_bool(0.7) { Rgb([255, 255, 255]) } else { light_color(rng) };
    fill_rect(image, r, bg);
    let area = draw_axes(image, r, rng);
    let curves = rng.gen_range(1..4);
    let (w, h) = (area.width().max(2) as f64, area.height().max(2) as f64);
    for _ in 0..curves {
        let color = Rgb([rng.gen_range(0..200), rng.gen_range(0..200), rng.gen_range(0..200)]);
        let freq = rng.gen_range(0.5..4.0);
        let phase = rng.gen_range(0.0..6.3);
        let amp = rng.gen_range(0.1..0.45);
        let base = rng.gen_range(0.3..0.7);
        let trend = rng.gen_range(-0.3..0.3);
        let mut prev: Option<(i64, i64)> = None;
        let steps = area.width().max(2);
        for s in 0..steps {
            let t = s as f64 / (steps - 1).max(1) as f64;
            let v = (base + trend * (t - 0.5) + amp * (freq * t * std::f64::consts::TAU + phase).sin() * 0.5).clamp(0.0, 1.0);
            let px = area.x0 as i64 + (t * (w - 1.0)) as i64;
            let py = area.y1 as i64 - 1 - (v * (h - 1.0)) as i64;
            if let Some(p) = prev {
                draw_line(image, p, (px, py), color, r);
            }
            prev = Some((px, py));
        }
        if rng.gen_bool(0.4) {
            for _ in 0..rng.gen_range(4..10) {
                let px = area.x0 as f64 + rng.gen_range(0.0..w);
                let py = area.y0 as f64 + rng.gen_range(0.0..h);
                fill_disc(image, px, py, 1.5, color, r);
            }
        }
    }
}

fn paint_bars<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) {
    fill_rect(image, r, Rgb([255, 255, 255]));
    let area = draw_axes(image, r, rng);
    let n = rng.gen_range(3..8) as u32;
    let slot = (area.width() / n).max(1);
    let palette = [random_color(rng), random_color(rng)];
    for b in 0..n {
        let height = (area.height() as f64 * rng.gen_range(0.15..0.95)) as u32;
        let bar = PixelRect {
            x0: area.x0 + b * slot + slot / 5,
            y0: area.y1.saturating_sub(height),
            x1: (area.x0 + (b + 1) * slot - slot / 5).min(area.x1),
            y1: area.y1,
        };
        if bar.x1 > bar.x0 && bar.y1 > bar.y0 {
            fill_rect(image, &bar, palette[b as usize % 2]);
        }
    }
}

fn paint_heatmap<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) {
    let cells = rng.gen_range(4..10) as u32;
    let (a, b) = (random_color(rng), random_color(rng));
    let cw = (r.width() / cells).max(1);
    let ch = (r.height() / cells).max(1);
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let (ci, cj) = ((y - r.y0) / ch, (x - r.x0) / cw);
            let t = (((ci * 7 + cj * 13) % 11) as f64 / 10.0 + rng.gen_range(0.0..0.05)).min(1.0);
            let px = Rgb([0, 1, 2].map(|c| (a[c] as f64 * (1.0 - t) + b[c] as f64 * t) as u8));
            image.put_pixel(x, y, px);
        }
    }
}

fn paint_micrograph<R: Rng + ?Sized>(image: &mut RgbImage, r: &PixelRect, rng: &mut R) {
    let base: f64 = rng.gen_range(20.0..90.0);
    let tint = [rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0), rng.gen_range(0.8..1.0)];
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(4..14))
        .map(|_| {
            (
                r.x0 as f64 + rng.gen_range(0.0..r.width() as f64),
                r.y0 as f64 + rng.gen_range(0.0..r.height() as f64),
                rng.gen_range(2.0..(r.width().min(r.height()) as f64 / 4.0).max(3.0)),
                rng.gen_range(60.0..180.0),
            )
        })
        .collect();
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let mut v = base + rng.gen_range(-15.0..15.0);
            for &(bx, by, s, amp) in &blobs {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                v += amp * (-d2 / (2.0 * s * s)).exp();
            }
            let v = v.clamp(0.0, 255.0);
            image.put_pixel(x, y, Rgb(tint.map(|t| (v * t) as u8)));
        }
    }
}

/// Recipe for a whole corpus of synthetic figures.
///
/// Labels run in reading order (`a`, `b`, ...), so the class frequencies of
/// the corpus follow from the distribution of panel counts. That distribution
/// is derived from `profile`: with non-increasing weights `w_1 ≥ w_2 ≥ ...`,
/// a figure has exactly `k` panels with probability `(w_k - w_{k+1}) / w_1`,
/// which makes class `k` appear in a `w_k / w_1` fraction of figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub count: usize,
    pub id_prefix: String,
    pub width: u32,
    pub height: u32,
    pub alphabet: Alphabet,
    pub profile: ImbalanceProfile,
    /// Relative weights of corner / above / below label placement.
    pub position_weights: [f64; 3],
    pub jitter: f64,
    pub glyphs: GlyphRanges,
}

impl CorpusSpec {
    /// Probability of each panel count `1..=n_classes`.
    pub fn panel_count_distribution(&self) -> Result<Vec<f64>> {
        let w = self.profile.weights();
        if w.len() != self.alphabet.len() {
            return Err(Error::invalid(format!(
                "profile has {} weights for {} classes",
                w.len(),
                self.alphabet.len()
            )));
        }
        if w.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::invalid("sequential labelling needs a non-increasing profile"));
        }
        let top = w[0];
        if top <= 0.0 {
            return Err(Error::invalid("the first class must have positive weight"));
        }
        Ok((0..w.len())
            .map(|k| (w[k] - w.get(k + 1).copied().unwrap_or(0.0)) / top)
            .collect())
    }

    fn layout_for<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
        let mut options: Vec<(usize, usize)> = Vec::new();
        for rows in 1..=n {
            let cols = n.div_ceil(rows);
            // no completely empty trailing row
            if rows * cols - n < cols && cols <= 5 && rows <= 5 {
                options.push((rows, cols));
            }
        }
        options.retain(|&(r, c)| r.abs_diff(c) <= 2 || n <= 3);
        *options.choose(rng).unwrap_or(&(1, n))
    }
}

/// Per-figure seed so figures are independent of the corpus size.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<FigureRecord>> {
    let dist = spec.panel_count_distribution()?;
    let pos_total: f64 = spec.position_weights.iter().sum();
    if pos_total <= 0.0 || spec.position_weights.iter().any(|&p| p < 0.0) {
        return Err(Error::invalid("label position weights must be non-negative with a positive sum"));
    }
    (0..spec.count)
        .map(|i| {
            let fig_seed = mix_seed(seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(fig_seed);
            let mut u: f64 = rng.gen();
            let mut n = dist.len();
            for (k, p) in dist.iter().enumerate() {
                if u < *p {
                    n = k + 1;
                    break;
                }
                u -= p;
            }
            let (rows, cols) = CorpusSpec::layout_for(n, &mut rng);
            let mut v: f64 = rng.gen::<f64>() * pos_total;
            let mut position = LabelPosition::Below;
            for (p, w) in [LabelPosition::Corner, LabelPosition::Above, LabelPosition::Below]
                .into_iter()
                .zip(spec.position_weights)
            {
                if v < w {
                    position = p;
                    break;
                }
                v -= w;
            }
            let layout = SyntheticLayoutSpec {
                rows,
                cols,
                jitter: spec.jitter,
                n_subfigures: n,
                label_position: position,
                alphabet: spec.alphabet.classes().to_vec(),
                width: spec.width,
                height: spec.height,
                glyphs: spec.glyphs.clone(),
            };
            let mut record = generate_synthetic_figure(&layout, rng.gen())?;
            record.image_id = format!("{}{:05}", spec.id_prefix, i);
            Ok(record)
        })
        .collect()
}
