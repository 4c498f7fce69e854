//! Pixel-level helpers: box ↔ pixel conversions, crops, model input tensors
//! and the drawing primitives used by the synthetic generator.

use image::{imageops, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{BBox, BinaryMask};
use crate::nn::Tensor;

/// Integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn to_bbox(&self, width: u32, height: u32) -> BBox {
        let (w, h) = (width as f64, height as f64);
        BBox {
            x: (self.x0 + self.x1) as f64 / (2.0 * w),
            y: (self.y0 + self.y1) as f64 / (2.0 * h),
            w: self.width() as f64 / w,
            h: self.height() as f64 / h,
        }
    }

    pub fn union(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Pixels covered by a normalized box: outward rounding, clipped to the
/// image. `None` if the box misses the image entirely.
pub fn box_to_pixels(b: &BBox, width: u32, height: u32) -> Option<PixelRect> {
    let (w, h) = (width as f64, height as f64);
    let x0 = (b.x0() * w).floor().max(0.0);
    let y0 = (b.y0() * h).floor().max(0.0);
    let x1 = (b.x1() * w).ceil().min(w);
    let y1 = (b.y1() * h).ceil().min(h);
    (x1 > x0 && y1 > y0).then(|| PixelRect {
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
    })
}

pub fn crop(image: &RgbImage, r: &PixelRect) -> RgbImage {
    imageops::crop_imm(image, r.x0, r.y0, r.width(), r.height()).to_image()
}

/// Crops a box grown by `padding` on each side, clipped to the image, and
/// resamples it to a `size × size` square.
pub fn crop_patch(image: &RgbImage, b: &BBox, padding: f64, size: u32) -> Result<RgbImage> {
    b.validate()?;
    if size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let grown = b.expanded(padding);
    let rect = box_to_pixels(&grown, image.width(), image.height())
        .ok_or_else(|| Error::invalid(format!("box {b:?} lies outside the image")))?;
    let region = crop(image, &rect);
    if region.width() == size && region.height() == size {
        return Ok(region);
    }
    Ok(imageops::resize(&region, size, size, imageops::FilterType::Triangle))
}

/// Converts an image to a `(3 or 4) × res × res` tensor in `[0, 1]`, with the
/// optional mask appended as the last channel.
pub fn image_to_tensor(image: &RgbImage, res: usize, mask: Option<&BinaryMask>, channels: usize) -> Result<Tensor> {
    if channels != 3 && channels != 4 {
        return Err(Error::invalid(format!("unsupported input channel count {channels}")));
    }
    if let Some(m) = mask {
        if m.height() != res || m.width() != res {
            return Err(Error::invalid(format!(
                "mask is {}x{} but the model input is {res}x{res}",
                m.height(),
                m.width()
            )));
        }
        if channels != 4 {
            return Err(Error::invalid("mask supplied to a model without a mask channel"));
        }
    }
    let resized;
    let src = if image.width() as usize == res && image.height() as usize == res {
        image
    } else {
        resized = imageops::resize(image, res as u32, res as u32, imageops::FilterType::Triangle);
        &resized
    };
    let plane = res * res;
    let mut data = vec![0.0f32; channels * plane];
    for (idx, px) in src.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + idx] = px[c] as f32 / 255.0;
        }
    }
    if let Some(m) = mask {
        for (d, &v) in data[3 * plane..].iter_mut().zip(m.values()) {
            *d = v as f32;
        }
    }
    Ok(Tensor::from_vec(channels, res, res, data))
}

pub fn luminance(p: &Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

pub fn mean_luminance(image: &RgbImage, r: &PixelRect) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in r.y0..r.y1.min(image.height()) {
        for x in r.x0..r.x1.min(image.width()) {
            sum += luminance(image.get_pixel(x, y));
            n += 1;
        }
    }
    if n == 0 {
        255.0
    } else {
        sum / n as f64
    }
}

pub fn fill_rect(image: &mut RgbImage, r: &PixelRect, color: Rgb<u8>) {
    for y in r.y0..r.y1.min(image.height()) {
        for x in r.x0..r.x1.min(image.width()) {
            image.put_pixel(x, y, color);
        }
    }
}

pub fn stroke_rect(image: &mut RgbImage, r: &PixelRect, color: Rgb<u8>) {
    if r.width() == 0 || r.height() == 0 {
        return;
    }
    for x in r.x0..r.x1 {
        put(image, x as i64, r.y0 as i64, color);
        put(image, x as i64, r.y1 as i64 - 1, color);
    }
    for y in r.y0..r.y1 {
        put(image, r.x0 as i64, y as i64, color);
        put(image, r.x1 as i64 - 1, y as i64, color);
    }
}

#[inline]
pub fn put(image: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < image.width() && (y as u32) < image.height() {
        image.put_pixel(x as u32, y as u32, color);
    }
}

/// Filled disc clipped to `clip`.
pub fn fill_disc(image: &mut RgbImage, cx: f64, cy: f64, radius: f64, color: Rgb<u8>, clip: &PixelRect) {
    let r2 = radius * radius;
    let y0 = ((cy - radius).floor().max(clip.y0 as f64)) as u32;
    let y1 = ((cy + radius).ceil().min(clip.y1 as f64)) as u32;
    let x0 = ((cx - radius).floor().max(clip.x0 as f64)) as u32;
    let x1 = ((cx + radius).ceil().min(clip.x1 as f64)) as u32;
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r2 {
                image.put_pixel(x, y, color);
            }
        }
    }
}

/// Bresenham line, clipped to `clip`.
pub fn draw_line(image: &mut RgbImage, from: (i64, i64), to: (i64, i64), color: Rgb<u8>, clip: &PixelRect) {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= clip.x0 as i64 && x < clip.x1 as i64 && y >= clip.y0 as i64 && y < clip.y1 as i64 {
            put(image, x, y, color);
        }
        if x == to.0 && y == to.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn full_box_crop_is_whole_image() {
        let img = gradient_image(32, 32);
        let full = BBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(crop_patch(&img, &full, 0.0, 32).unwrap(), img);
        let small = crop_patch(&img, &full, 0.0, 16).unwrap();
        assert_eq!(small.dimensions(), (16, 16));
    }

    #[test]
    fn corner_crop_is_clipped() {
        let img = gradient_image(100, 80);
        // 10x8 px box in the top-left corner; padding 0.2 would reach -2 px
        let b = PixelRect { x0: 0, y0: 0, x1: 10, y1: 8 }.to_bbox(100, 80);
        let grown = box_to_pixels(&b.expanded(0.2), 100, 80).unwrap();
        assert_eq!(grown, PixelRect { x0: 0, y0: 0, x1: 12, y1: 10 });
        let p = crop_patch(&img, &b, 0.2, 24).unwrap();
        assert_eq!(p.dimensions(), (24, 24));
        assert_eq!(p, crop_patch(&img, &b, 0.2, 24).unwrap());
    }

    #[test]
    fn outside_box_is_rejected() {
        let img = gradient_image(10, 10);
        let b = BBox::new(2.0, 2.0, 0.1, 0.1).unwrap();
        assert!(crop_patch(&img, &b, 0.0, 8).is_err());
    }

    #[test]
    fn tensor_layout_and_mask_channel() {
        let img = gradient_image(4, 4);
        let mask = crate::geometry::rasterize_mask(&[BBox::new(0.25, 0.25, 0.5, 0.5).unwrap()], 4, 4).unwrap();
        let t = image_to_tensor(&img, 4, Some(&mask), 4).unwrap();
        assert_eq!(t.at(0, 1, 2), img.get_pixel(2, 1)[0] as f32 / 255.0);
        assert_eq!(t.at(3, 0, 0), 1.0);
        assert_eq!(t.at(3, 3, 3), 0.0);
        let bad = BinaryMask::zeros(5, 5);
        assert!(image_to_tensor(&img, 4, Some(&bad), 4).is_err());
    }
}
