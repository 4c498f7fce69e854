use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Alphabet, FigureRecord, LabeledBox, SubfigureBox};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Serialize, Deserialize)]
struct AnnotatedBox {
    class: String,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationLine {
    image_id: String,
    width: u32,
    height: u32,
    labels: Vec<AnnotatedBox>,
    subfigures: Vec<AnnotatedBox>,
}

fn to_annotated(b: &BBox, class: u32, alphabet: &Alphabet) -> Result<AnnotatedBox> {
    let glyph = alphabet
        .glyph(class)
        .ok_or_else(|| Error::invalid(format!("class id {class} is not in the alphabet")))?;
    Ok(AnnotatedBox {
        class: glyph.to_string(),
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
    })
}

/// Writes `images/<id>.png` and `annotations.jsonl` under `dir`.
pub fn save_corpus(records: &[FigureRecord], dir: &Path, alphabet: &Alphabet) -> Result<()> {
    let images = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let file = fs::File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        r.validate()?;
        let line = AnnotationLine {
            image_id: r.image_id.clone(),
            width: r.width(),
            height: r.height(),
            labels: r
                .label_boxes
                .iter()
                .map(|l| to_annotated(&l.bbox, l.class, alphabet))
                .collect::<Result<_>>()?,
            subfigures: r
                .subfig_boxes
                .iter()
                .map(|s| to_annotated(&s.bbox, s.class, alphabet))
                .collect::<Result<_>>()?,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(&ann_path, e))?;
        let img_path = images.join(format!("{}.png", r.image_id));
        r.image.save_with_format(&img_path, image::ImageFormat::Png)?;
    }
    out.flush().map_err(|e| Error::io(&ann_path, e))?;
    Ok(())
}

/// Loads and validates every record listed in `annotations.jsonl`. A
/// directory without an annotation file is an empty corpus.
pub fn load_corpus(dir: &Path, alphabet: &Alphabet) -> Result<Vec<FigureRecord>> {
    let ann_path = dir.join(ANNOTATIONS_FILE);
    if !ann_path.exists() {
        if dir.is_dir() {
            return Ok(Vec::new());
        }
        return Err(Error::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let file = fs::File::open(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let ann: AnnotationLine = serde_json::from_str(&line).map_err(|e| Error::MalformedAnnotation {
            line: lineno,
            message: e.to_string(),
        })?;
        records.push(decode_record(ann, dir, lineno, alphabet)?);
    }
    Ok(records)
}

fn decode_box(a: &AnnotatedBox, lineno: usize, alphabet: &Alphabet) -> Result<(BBox, u32)> {
    let bbox = BBox::new(a.x, a.y, a.w, a.h).map_err(|e| Error::MalformedAnnotation {
        line: lineno,
        message: e.to_string(),
    })?;
    let class = alphabet.id_of(&a.class).ok_or_else(|| Error::MalformedAnnotation {
        line: lineno,
        message: format!("unknown label class `{}`", a.class),
    })?;
    Ok((bbox, class))
}

fn decode_record(ann: AnnotationLine, dir: &Path, lineno: usize, alphabet: &Alphabet) -> Result<FigureRecord> {
    for s in &ann.subfigures {
        let referenced = alphabet.id_of(&s.class);
        let present = ann.labels.iter().any(|l| alphabet.id_of(&l.class) == referenced);
        if referenced.is_some() && !present {
            return Err(Error::DanglingLabelClass {
                image_id: ann.image_id.clone(),
                class: s.class.clone(),
            });
        }
    }
    let label_boxes = ann
        .labels
        .iter()
        .map(|l| {
            decode_box(l, lineno, alphabet).map(|(bbox, class)| LabeledBox {
                bbox,
                class,
                confidence: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let subfig_boxes = ann
        .subfigures
        .iter()
        .map(|s| decode_box(s, lineno, alphabet).map(|(bbox, class)| SubfigureBox { bbox, class }))
        .collect::<Result<Vec<_>>>()?;
    let img_path = dir.join(IMAGES_DIR).join(format!("{}.png", ann.image_id));
    if !img_path.exists() {
        return Err(Error::MissingImage {
            image_id: ann.image_id,
            path: img_path,
        });
    }
    let image = image::open(&img_path)?.to_rgb8();
    if image.width() != ann.width || image.height() != ann.height {
        return Err(Error::InvalidRecord {
            image_id: ann.image_id,
            message: format!(
                "annotation says {}x{} but the image is {}x{}",
                ann.width,
                ann.height,
                image.width(),
                image.height()
            ),
        });
    }
    let record = FigureRecord {
        image_id: ann.image_id,
        image,
        label_boxes,
        subfig_boxes,
    };
    record.validate()?;
    Ok(record)
}
