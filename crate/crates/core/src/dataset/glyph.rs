//! Bitmap glyph rendering for subfigure labels.
//!
//! Glyphs come from the public-domain 8×8 console font; "styles" are
//! deterministic transforms of that bitmap (emboldening, slanting) followed by
//! nearest-neighbour scaling.

use font8x8::legacy::BASIC_LEGACY;
use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{mean_luminance, PixelRect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlyphStyle {
    Regular,
    Bold,
    Slanted,
}

impl GlyphStyle {
    pub const ALL: [GlyphStyle; 3] = [GlyphStyle::Regular, GlyphStyle::Bold, GlyphStyle::Slanted];

    pub fn font_name(&self) -> &'static str {
        match self {
            GlyphStyle::Regular => "font8x8-basic",
            GlyphStyle::Bold => "font8x8-basic-bold",
            GlyphStyle::Slanted => "font8x8-basic-slanted",
        }
    }
}

/// Names of every font style the generators can draw with.
pub fn font_names() -> Vec<&'static str> {
    GlyphStyle::ALL.iter().map(GlyphStyle::font_name).collect()
}

/// Ink coverage trimmed to its bounding box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphBitmap {
    pub width: u32,
    pub height: u32,
    ink: Vec<bool>,
}

impl GlyphBitmap {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.ink[(y * self.width + x) as usize]
    }

    pub fn ink_count(&self) -> usize {
        self.ink.iter().filter(|&&b| b).count()
    }
}

fn base_bitmap(text: &str) -> (usize, usize, Vec<bool>) {
    let chars: Vec<char> = text.chars().collect();
    let (w, h) = (8 * chars.len().max(1), 8);
    let mut ink = vec![false; w * h];
    for (k, ch) in chars.iter().enumerate() {
        let rows = BASIC_LEGACY.get(*ch as usize).copied().unwrap_or([0; 8]);
        for (r, bits) in rows.iter().enumerate() {
            for c in 0..8 {
                if bits >> c & 1 == 1 {
                    ink[r * w + k * 8 + c] = true;
                }
            }
        }
    }
    (w, h, ink)
}

/// Renders `text` at `scale` (pixels per font pixel) in `style`.
pub fn render(text: &str, scale: f64, style: GlyphStyle) -> GlyphBitmap {
    let (mut w, h, mut ink) = base_bitmap(text);
    match style {
        GlyphStyle::Regular => {}
        GlyphStyle::Bold => {
            let mut bold = vec![false; (w + 1) * h];
            for y in 0..h {
                for x in 0..w {
                    if ink[y * w + x] {
                        bold[y * (w + 1) + x] = true;
                        bold[y * (w + 1) + x + 1] = true;
                    }
                }
            }
            w += 1;
            ink = bold;
        }
        GlyphStyle::Slanted => {
            let extra = 3;
            let mut slanted = vec![false; (w + extra) * h];
            for y in 0..h {
                let shift = (h - 1 - y) * extra / h;
                for x in 0..w {
                    if ink[y * w + x] {
                        slanted[y * (w + extra) + x + shift] = true;
                    }
                }
            }
            w += extra;
            ink = slanted;
        }
    }
    let scale = scale.max(0.5);
    let sw = ((w as f64 * scale).round() as usize).max(1);
    let sh = ((h as f64 * scale).round() as usize).max(1);
    let mut scaled = vec![false; sw * sh];
    for y in 0..sh {
        let src_y = ((y as f64 + 0.5) / scale).floor() as usize;
        for x in 0..sw {
            let src_x = ((x as f64 + 0.5) / scale).floor() as usize;
            if src_y < h && src_x < w {
                scaled[y * sw + x] = ink[src_y * w + src_x];
            }
        }
    }
    trim(sw, sh, scaled)
}

fn trim(w: usize, h: usize, ink: Vec<bool>) -> GlyphBitmap {
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if ink[y * w + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x1 <= x0 {
        return GlyphBitmap {
            width: 1,
            height: 1,
            ink: vec![false],
        };
    }
    let (tw, th) = (x1 - x0, y1 - y0);
    let mut out = Vec::with_capacity(tw * th);
    for y in y0..y1 {
        out.extend_from_slice(&ink[y * w + x0..y * w + x1]);
    }
    GlyphBitmap {
        width: tw as u32,
        height: th as u32,
        ink: out,
    }
}

/// Randomized rendering parameters for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphAppearance {
    pub text: String,
    pub scale: f64,
    pub style: GlyphStyle,
}

/// Typography ranges the generators sample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphRanges {
    pub min_scale: f64,
    pub max_scale: f64,
    /// Probability of an uppercase variant.
    pub p_upper: f64,
    /// Probability of a parenthesized variant.
    pub p_paren: f64,
}

impl Default for GlyphRanges {
    fn default() -> Self {
        GlyphRanges {
            min_scale: 1.0,
            max_scale: 2.0,
            p_upper: 0.15,
            p_paren: 0.15,
        }
    }
}

impl GlyphRanges {
    pub fn sample<R: Rng + ?Sized>(&self, glyph: &str, rng: &mut R) -> GlyphAppearance {
        let u: f64 = rng.gen();
        let text = if u < self.p_upper {
            glyph.to_uppercase()
        } else if u < self.p_upper + self.p_paren {
            format!("({glyph})")
        } else {
            glyph.to_string()
        };
        let scale = if self.max_scale > self.min_scale {
            rng.gen_range(self.min_scale..self.max_scale)
        } else {
            self.min_scale
        };
        let style = GlyphStyle::ALL[rng.gen_range(0..GlyphStyle::ALL.len())];
        GlyphAppearance { text, scale, style }
    }
}

/// A colour that stands out against the region it will be drawn on.
pub fn contrasting_color<R: Rng + ?Sized>(image: &RgbImage, region: &PixelRect, rng: &mut R) -> Rgb<u8> {
    let lum = mean_luminance(image, region);
    let dark = [Rgb([0, 0, 0]), Rgb([0, 0, 0]), Rgb([20, 20, 120]), Rgb([140, 0, 0])];
    let light = [Rgb([255, 255, 255]), Rgb([255, 255, 255]), Rgb([255, 230, 60])];
    if lum > 110.0 {
        dark[rng.gen_range(0..dark.len())]
    } else {
        light[rng.gen_range(0..light.len())]
    }
}

/// Draws the glyph with its top-left ink pixel at `(x, y)`; returns the ink
/// rectangle (clipped to the image).
pub fn stamp(image: &mut RgbImage, glyph: &GlyphBitmap, x: u32, y: u32, color: Rgb<u8>) -> PixelRect {
    for gy in 0..glyph.height {
        for gx in 0..glyph.width {
            if glyph.get(gx, gy) && x + gx < image.width() && y + gy < image.height() {
                image.put_pixel(x + gx, y + gy, color);
            }
        }
    }
    PixelRect {
        x0: x.min(image.width()),
        y0: y.min(image.height()),
        x1: (x + glyph.width).min(image.width()),
        y1: (y + glyph.height).min(image.height()),
    }
}
