//! Annotated compound figures: schema, persistence and synthetic generators.

mod corpus;
pub mod glyph;
mod imbalance;
mod patches;
mod synth;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use corpus::{load_corpus, save_corpus, ANNOTATIONS_FILE, IMAGES_DIR};
pub use imbalance::{sample_imbalanced, ImbalanceProfile};
pub(crate) use patches::jitter_box;
pub use patches::{generate_label_patch, real_label_patches, PatchConfig, PatchSample};
pub use synth::{generate_corpus, generate_synthetic_figure, mix_seed, CorpusSpec, LabelPosition, SyntheticLayoutSpec};

/// Background / "no label" class id.
pub const BACKGROUND: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelClass {
    pub id: u32,
    pub glyph: String,
}

/// Ordered set of label classes with ids `1..=n`.
///
/// Typographic variants of a glyph (`"(b)"`, `"B"`, `"b)"`) resolve to the
/// same class when `fold_variants` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    classes: Vec<LabelClass>,
    pub fold_variants: bool,
}

impl Alphabet {
    pub fn new<S: AsRef<str>>(glyphs: &[S]) -> Result<Self> {
        let mut classes: Vec<LabelClass> = Vec::with_capacity(glyphs.len());
        for (k, g) in glyphs.iter().enumerate() {
            let g = g.as_ref();
            if g.is_empty() || classes.iter().any(|c| c.glyph == g) {
                return Err(Error::invalid(format!("duplicate or empty glyph `{g}`")));
            }
            classes.push(LabelClass {
                id: k as u32 + 1,
                glyph: g.to_string(),
            });
        }
        if classes.is_empty() {
            return Err(Error::invalid("alphabet must have at least one class"));
        }
        Ok(Alphabet {
            classes,
            fold_variants: true,
        })
    }

    /// The first `n` lowercase letters.
    pub fn lowercase(n: usize) -> Self {
        let glyphs: Vec<String> = (b'a'..=b'z').take(n).map(|c| (c as char).to_string()).collect();
        Alphabet::new(&glyphs).expect("distinct letters")
    }

    pub fn classes(&self) -> &[LabelClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Class count including background.
    pub fn num_outputs(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn glyph(&self, id: u32) -> Option<&str> {
        if id == BACKGROUND {
            return None;
        }
        self.classes.get(id as usize - 1).map(|c| c.glyph.as_str())
    }

    pub fn id_of(&self, text: &str) -> Option<u32> {
        if let Some(c) = self.classes.iter().find(|c| c.glyph == text) {
            return Some(c.id);
        }
        if !self.fold_variants {
            return None;
        }
        let core = text.trim_matches(|ch: char| ch == '(' || ch == ')' || ch == '.' || ch.is_whitespace());
        let folded = core.to_lowercase();
        self.classes
            .iter()
            .find(|c| c.glyph == core || c.glyph.to_lowercase() == folded)
            .map(|c| c.id)
    }
}

impl Default for Alphabet {
    /// `a` through `i`.
    fn default() -> Self {
        Alphabet::lowercase(9)
    }
}

/// A box tagged with a label class and a confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub class: u32,
    pub confidence: f64,
}

/// Ground-truth subfigure tied to the label class that names it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubfigureBox {
    pub bbox: BBox,
    pub class: u32,
}

/// A compound figure with its label and subfigure ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureRecord {
    pub image_id: String,
    pub image: RgbImage,
    pub label_boxes: Vec<LabeledBox>,
    pub subfig_boxes: Vec<SubfigureBox>,
}

/// Slack for float round-off when checking label-inside-subfigure.
const CONTAINMENT_EPS: f64 = 1e-9;

impl FigureRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::InvalidRecord {
            image_id: self.image_id.clone(),
            message,
        };
        for l in &self.label_boxes {
            l.bbox.validate().map_err(|e| fail(e.to_string()))?;
            if l.class == BACKGROUND {
                return Err(fail("label box with background class".into()));
            }
        }
        for (k, l) in self.label_boxes.iter().enumerate() {
            if self.label_boxes[..k].iter().any(|o| o.class == l.class) {
                return Err(fail(format!("label class {} appears more than once", l.class)));
            }
        }
        for s in &self.subfig_boxes {
            s.bbox.validate().map_err(|e| fail(e.to_string()))?;
            if self.subfig_boxes.iter().filter(|o| o.class == s.class).count() > 1 {
                return Err(fail(format!("two subfigures claim label class {}", s.class)));
            }
            let label = self
                .label_boxes
                .iter()
                .find(|l| l.class == s.class)
                .ok_or_else(|| Error::DanglingLabelClass {
                    image_id: self.image_id.clone(),
                    class: s.class.to_string(),
                })?;
            if let (Some(lb), Some(sb)) = (label.bbox.clipped(), s.bbox.clipped()) {
                let inside = lb.x0() >= sb.x0() - CONTAINMENT_EPS
                    && lb.y0() >= sb.y0() - CONTAINMENT_EPS
                    && lb.x1() <= sb.x1() + CONTAINMENT_EPS
                    && lb.y1() <= sb.y1() + CONTAINMENT_EPS;
                if !inside {
                    return Err(fail(format!("label {} lies outside its subfigure", s.class)));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    /// Ground-truth labels with confidence 1.
    pub fn gt_labels(&self) -> Vec<LabeledBox> {
        self.label_boxes.clone()
    }

    /// `(label, subfigure)` ground-truth pairs, skipping subfigures without a
    /// label.
    pub fn pairs(&self) -> Vec<(LabeledBox, SubfigureBox)> {
        self.subfig_boxes
            .iter()
            .filter_map(|s| {
                let l = self.label_boxes.iter().find(|l| l.class == s.class);
                if l.is_none() {
                    log::warn!("{}: subfigure {} has no label; skipped", self.image_id, s.class);
                }
                l.map(|l| (*l, *s))
            })
            .collect()
    }
}
