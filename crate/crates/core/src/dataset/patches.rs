//! Classifier training patches: real crops at labelled boxes, and synthetic
//! ones made by pasting a random glyph onto a random background region.

use image::RgbImage;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::glyph::{self, GlyphRanges};
use super::{Alphabet, FigureRecord, ImbalanceProfile, BACKGROUND};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::raster::{box_to_pixels, crop_patch, PixelRect};

/// A classifier input with its target class (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub raster: RgbImage,
    pub target: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub size: u32,
    /// Crop padding as a fraction of the box size per side.
    pub padding: f64,
    pub p_background: f64,
    /// Class weights for pasted glyphs; uniform when absent.
    pub class_weights: Option<ImbalanceProfile>,
    /// Random shift / rescale of the crop box, as a fraction of its size,
    /// mimicking imperfect localization.
    pub box_jitter: f64,
    pub glyphs: GlyphRanges,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: 32,
            padding: 0.15,
            p_background: 0.5,
            class_weights: None,
            box_jitter: 0.1,
            glyphs: GlyphRanges::default(),
        }
    }
}

/// Randomly perturbs a box's position and size by up to `amount` of its size.
pub(crate) fn jitter_box<R: Rng + ?Sized>(b: &BBox, amount: f64, rng: &mut R) -> BBox {
    if amount <= 0.0 {
        return *b;
    }
    let mut j = || rng.gen_range(-amount..=amount);
    BBox {
        x: b.x + j() * b.w,
        y: b.y + j() * b.h,
        w: b.w * (1.0 + j()),
        h: b.h * (1.0 + j()),
    }
}

fn label_rects(fig: &FigureRecord) -> Vec<PixelRect> {
    fig.label_boxes
        .iter()
        .filter_map(|l| box_to_pixels(&l.bbox, fig.width(), fig.height()))
        .collect()
}

/// Picks a `w × h` rectangle inside the image, preferring spots clear of
/// existing labels.
fn free_spot<R: Rng + ?Sized>(fig: &FigureRecord, w: u32, h: u32, avoid: &[PixelRect], rng: &mut R) -> PixelRect {
    let (iw, ih) = (fig.width(), fig.height());
    let (w, h) = (w.min(iw), h.min(ih));
    let mut spot = PixelRect { x0: 0, y0: 0, x1: w, y1: h };
    for _ in 0..20 {
        let x0 = rng.gen_range(0..=iw - w);
        let y0 = rng.gen_range(0..=ih - h);
        spot = PixelRect {
            x0,
            y0,
            x1: x0 + w,
            y1: y0 + h,
        };
        if !avoid.iter().any(|a| a.intersects(&spot)) {
            break;
        }
    }
    spot
}

/// One synthetic patch: background-only with probability `p_background`,
/// otherwise a glyph of a randomly drawn class pasted onto a random region
/// of a random figure.
pub fn generate_label_patch(
    corpus: &[FigureRecord],
    alphabet: &Alphabet,
    seed: u64,
    config: &PatchConfig,
) -> Result<PatchSample> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("label patches need at least one figure".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fig = &corpus[rng.gen_range(0..corpus.len())];
    let avoid = label_rects(fig);
    let background = rng.gen_bool(config.p_background.clamp(0.0, 1.0));
    let class = match &config.class_weights {
        Some(p) => {
            if p.len() != alphabet.len() {
                return Err(Error::invalid("class weights must match the alphabet"));
            }
            WeightedIndex::new(p.weights())
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng) as u32
                + 1
        }
        None => rng.gen_range(1..=alphabet.len() as u32),
    };
    let glyph_text = alphabet.glyph(class).expect("class drawn from alphabet");
    let look = config.glyphs.sample(glyph_text, &mut rng);
    let mut bitmap = glyph::render(&look.text, look.scale, look.style);
    if bitmap.width * 3 > fig.width() || bitmap.height * 3 > fig.height() {
        bitmap = glyph::render(&look.text, 1.0, look.style);
    }
    let spot = free_spot(fig, bitmap.width + 2, bitmap.height + 2, &avoid, &mut rng);
    let (w, h) = (fig.width(), fig.height());
    if background {
        let b = jitter_box(&spot.to_bbox(w, h), config.box_jitter, &mut rng);
        let raster = crop_patch(&fig.image, &b, config.padding, config.size)?;
        return Ok(PatchSample {
            raster,
            target: BACKGROUND,
        });
    }
    let mut canvas = fig.image.clone();
    let ink_spot = PixelRect {
        x0: spot.x0 + 1,
        y0: spot.y0 + 1,
        x1: spot.x1 - 1,
        y1: spot.y1 - 1,
    };
    let color = glyph::contrasting_color(&canvas, &ink_spot, &mut rng);
    let ink = glyph::stamp(&mut canvas, &bitmap, ink_spot.x0, ink_spot.y0, color);
    let rect = PixelRect {
        x0: ink.x0.saturating_sub(1),
        y0: ink.y0.saturating_sub(1),
        x1: (ink.x1 + 1).min(w),
        y1: (ink.y1 + 1).min(h),
    };
    let b = jitter_box(&rect.to_bbox(w, h), config.box_jitter, &mut rng);
    let raster = crop_patch(&canvas, &b, config.padding, config.size)?;
    Ok(PatchSample { raster, target: class })
}

/// Crops around every ground-truth label, `copies` times each with fresh
/// box jitter, in corpus order.
pub fn real_label_patches(corpus: &[FigureRecord], config: &PatchConfig, copies: usize, seed: u64) -> Result<Vec<PatchSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for fig in corpus {
        for l in &fig.label_boxes {
            for _ in 0..copies {
                let b = jitter_box(&l.bbox, config.box_jitter, &mut rng);
                out.push(PatchSample {
                    raster: crop_patch(&fig.image, &b, config.padding, config.size)?,
                    target: l.class,
                });
            }
        }
    }
    Ok(out)
}
