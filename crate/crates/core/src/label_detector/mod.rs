//! Class-agnostic localization of subfigure labels.
//!
//! A strided backbone produces feature grids at one or more scales; a 1×1 head
//! predicts, per cell and anchor, box offsets and an objectness logit. Boxes
//! above the confidence threshold survive and are de-duplicated with NMS.
//! Classification is deliberately absent and lives in the label classifier.
//!
//! The same machinery with per-class outputs (`num_classes > 0`) gives the
//! jointly trained baseline used to measure what decoupling buys.

pub mod decode;
pub mod loss;

use std::path::Path;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{mix_seed, FigureRecord, LabeledBox};
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox, BinaryMask, Grid, GridCoord};
use crate::nn::{fit, BackboneConfig, Conv2d, HeadedNet, Parameters, SampleLoss, Schedule, Tensor, TrainLog};
use crate::raster::image_to_tensor;

pub use decode::{decode_box, encode_box, sigmoid, PredictionMap};
pub use loss::{assign, end_to_end_loss, localization_loss, Assignment, LossConfig, LossOutput, BOX_FIELDS, OBJ};

pub const MODEL_KIND: &str = "label-detector";

/// Objectness bias at initialization: a 1% prior keeps the many negatives
/// from swamping the first steps.
const OBJ_PRIOR_BIAS: f32 = -4.6;

/// Anchor priors `(w, h)` per scale, normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub scales: Vec<Vec<(f64, f64)>>,
}

impl AnchorSet {
    pub fn validate(&self) -> Result<()> {
        for (s, priors) in self.scales.iter().enumerate() {
            if priors.is_empty() {
                return Err(Error::invalid(format!("scale {s} has no anchors")));
            }
            if priors.iter().any(|&(w, h)| !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())) {
                return Err(Error::invalid(format!("scale {s} has a non-positive prior")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub input_resolution: usize,
    /// Backbone shape; its `out_strides` are the detection scales.
    pub backbone: BackboneConfig,
    pub anchors: AnchorSet,
    /// Confidence threshold ε.
    pub conf_threshold: f64,
    /// Confidence loss weight λ.
    pub lambda: f64,
    pub nms_iou: f64,
    pub ignore_iou: f64,
    /// Per-class outputs; 0 for the class-agnostic localizer.
    #[serde(default)]
    pub num_classes: usize,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.anchors.validate()?;
        if !(self.conf_threshold > 0.0 && self.conf_threshold < 1.0) {
            return Err(Error::invalid(format!("ε = {} must lie in (0, 1)", self.conf_threshold)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid(format!("λ = {} must be positive", self.lambda)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) || !(self.ignore_iou > 0.0 && self.ignore_iou <= 1.0) {
            return Err(Error::invalid("IoU thresholds must lie in (0, 1]"));
        }
        if self.anchors.scales.len() != self.backbone.out_strides.len() {
            return Err(Error::invalid(format!(
                "{} anchor scales for {} strides",
                self.anchors.scales.len(),
                self.backbone.out_strides.len()
            )));
        }
        for &s in &self.backbone.out_strides {
            if self.input_resolution % s != 0 {
                return Err(Error::invalid(format!(
                    "input resolution {} is not a multiple of stride {s}",
                    self.input_resolution
                )));
            }
        }
        if self.input_resolution % self.backbone.max_stride() != 0 {
            return Err(Error::invalid(format!(
                "input resolution {} is not a multiple of the deepest stride {}",
                self.input_resolution,
                self.backbone.max_stride()
            )));
        }
        Ok(())
    }

    pub fn fields(&self) -> usize {
        BOX_FIELDS + self.num_classes
    }

    pub fn grids(&self) -> Vec<Grid> {
        self.backbone
            .out_strides
            .iter()
            .enumerate()
            .map(|(s, &stride)| {
                let n = self.input_resolution / stride;
                Grid::new(n, n, s)
            })
            .collect()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            ignore_iou: self.ignore_iou,
        }
    }
}

/// Feature vectors `F_{i,j}` at every scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub scales: Vec<Tensor>,
    pub strides: Vec<usize>,
}

impl FeatureGrid {
    pub fn grid(&self, scale: usize) -> Grid {
        Grid::new(self.scales[scale].h, self.scales[scale].w, scale)
    }
}

/// One decoded prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub bbox: BBox,
    pub confidence: f64,
    pub cell: GridCoord,
    pub anchor_index: usize,
    /// Per-class probabilities (class `k + 1` at index `k`); empty for the
    /// class-agnostic localizer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_scores: Vec<f64>,
}

/// Decodes every (cell, anchor) of every scale.
pub fn predict_from_maps(maps: &[PredictionMap]) -> Vec<RawDetection> {
    let mut out = Vec::new();
    for m in maps {
        for cell in m.cells() {
            for a in 0..m.priors.len() {
                out.push(RawDetection {
                    bbox: m.decode(a, cell),
                    confidence: sigmoid(m.get(a, OBJ, cell)),
                    cell,
                    anchor_index: a,
                    class_scores: (BOX_FIELDS..m.fields).map(|f| sigmoid(m.get(a, f, cell))).collect(),
                });
            }
        }
    }
    out
}

/// Keeps detections with confidence strictly above `eps`, in input order.
pub fn cull(detections: &[RawDetection], eps: f64) -> Vec<RawDetection> {
    detections.iter().filter(|d| d.confidence > eps).cloned().collect()
}

/// Greedy non-maximum suppression. Output is ordered by descending
/// confidence, ties by input order.
pub fn nms(detections: &[RawDetection], iou_threshold: f64) -> Vec<RawDetection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence));
    let mut kept: Vec<RawDetection> = Vec::new();
    for i in order {
        let d = &detections[i];
        if kept.iter().all(|k| iou_unchecked(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d.clone());
        }
    }
    kept
}

/// Culling followed by NMS.
pub fn cull_and_suppress(detections: &[RawDetection], eps: f64, nms_iou: f64) -> Vec<RawDetection> {
    nms(&cull(detections, eps), nms_iou)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelDetector {
    pub config: DetectorConfig,
    pub net: HeadedNet,
}

impl Parameters for LabelDetector {
    fn convs(&self) -> Vec<&Conv2d> {
        self.net.convs().collect()
    }
    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        self.net.convs_mut().collect()
    }
}

impl LabelDetector {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fields = config.fields();
        let channels: Vec<usize> = config.anchors.scales.iter().map(|p| p.len() * fields).collect();
        let net = HeadedNet::new(
            config.backbone.clone(),
            &channels,
            |_, c| if c % fields == OBJ { OBJ_PRIOR_BIAS } else { 0.0 },
            &mut rng,
        )?;
        Ok(LabelDetector { config, net })
    }

    pub fn input_tensor(&self, image: &RgbImage, mask: Option<&BinaryMask>) -> Result<Tensor> {
        image_to_tensor(image, self.config.input_resolution, mask, self.config.backbone.in_channels)
    }

    /// Backbone features; a mask, when the model takes one, becomes the last
    /// input channel.
    pub fn extract_features(&self, image: &RgbImage, mask: Option<&BinaryMask>) -> Result<FeatureGrid> {
        let x = self.input_tensor(image, mask)?;
        Ok(FeatureGrid {
            scales: self.net.features(&x),
            strides: self.config.backbone.out_strides.clone(),
        })
    }

    pub fn prediction_maps(&self, features: &FeatureGrid) -> Vec<PredictionMap> {
        self.net
            .heads_on(&features.scales)
            .iter()
            .enumerate()
            .map(|(s, t)| {
                PredictionMap::from_tensor(t, features.grid(s), self.config.anchors.scales[s].clone(), self.config.fields())
            })
            .collect()
    }

    /// One detection per (cell, anchor) over all scales.
    pub fn predict_boxes(&self, features: &FeatureGrid) -> Vec<RawDetection> {
        predict_from_maps(&self.prediction_maps(features))
    }

    /// Culled, de-duplicated label boxes for an image.
    pub fn detect(&self, image: &RgbImage) -> Result<Vec<RawDetection>> {
        let f = self.extract_features(image, None)?;
        let raw = self.predict_boxes(&f);
        Ok(cull_and_suppress(&raw, self.config.conf_threshold, self.config.nms_iou))
    }

    /// Class-output models only: each surviving box takes its most likely
    /// class, scored by objectness × class probability, keeping the best
    /// box per class.
    pub fn detect_classes(&self, image: &RgbImage) -> Result<Vec<LabeledBox>> {
        if self.config.num_classes == 0 {
            return Err(Error::invalid("this detector has no class outputs"));
        }
        let mut out: Vec<LabeledBox> = Vec::new();
        for d in self.detect(image)? {
            let (k, p) = d
                .class_scores
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
            out.push(LabeledBox {
                bbox: d.bbox,
                class: k as u32 + 1,
                confidence: d.confidence * p,
            });
        }
        Ok(keep_best_per_class(out))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, MODEL_KIND, &self.config, self.net.convs())
    }

    pub fn load(path: &Path, config: &DetectorConfig) -> Result<Self> {
        let mut model = LabelDetector::new(config.clone(), 0)?;
        checkpoint::load_into(path, MODEL_KIND, config, model.net.convs_mut())?;
        Ok(model)
    }
}

/// At most one box per class, the most confident; output sorted by
/// descending confidence (ties by input order).
pub fn keep_best_per_class(boxes: Vec<LabeledBox>) -> Vec<LabeledBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].confidence.total_cmp(&boxes[a].confidence));
    let mut seen = std::collections::HashSet::new();
    order
        .into_iter()
        .filter(|&i| seen.insert(boxes[i].class))
        .map(|i| boxes[i])
        .collect()
}

struct Prepared {
    input: Tensor,
    labels: Vec<LabeledBox>,
}

fn prepare(model: &LabelDetector, corpus: &[FigureRecord]) -> Result<Vec<Prepared>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("label detector training needs at least one figure".into()));
    }
    corpus
        .iter()
        .map(|r| {
            Ok(Prepared {
                input: model.input_tensor(&r.image, None)?,
                labels: r.label_boxes.clone(),
            })
        })
        .collect()
}

/// Trains a detector on the label boxes of `corpus`. The class-agnostic
/// configuration sees only box geometry; a class-output configuration
/// also learns the classes jointly.
pub fn train_localizer(
    corpus: &[FigureRecord],
    config: &DetectorConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(LabelDetector, TrainLog)> {
    let mut model = LabelDetector::new(config.clone(), seed)?;
    let data = prepare(&model, corpus)?;
    let loss_cfg = config.loss();
    let grids = config.grids();
    let names: &[&str] = if config.num_classes > 0 {
        &["l1", "l2", "l_cls"]
    } else {
        &["l1", "l2"]
    };
    let log = fit(&mut model, schedule, names, |m: &LabelDetector, step, slot| {
        let pick = mix_seed(seed, (step * schedule.batch_size + slot) as u64) as usize % data.len();
        let item = &data[pick];
        let (outs, cache) = m.net.forward(&item.input);
        let maps: Vec<PredictionMap> = outs
            .iter()
            .enumerate()
            .map(|(s, t)| PredictionMap::from_tensor(t, grids[s], config.anchors.scales[s].clone(), config.fields()))
            .collect();
        let out = if config.num_classes > 0 {
            end_to_end_loss(&maps, &item.labels, &loss_cfg)?
        } else {
            let boxes: Vec<BBox> = item.labels.iter().map(|l| l.bbox).collect();
            localization_loss(&maps, &boxes, &loss_cfg)?
        };
        let head_grads: Vec<Tensor> = maps.iter().zip(&out.grads).map(|(m, g)| m.to_tensor(g)).collect();
        let grads = m.net.backward(&cache, &head_grads);
        let mut components = vec![out.l1, out.l2];
        if config.num_classes > 0 {
            components.push(out.l_cls);
        }
        Ok((
            SampleLoss {
                total: out.total,
                components,
            },
            grads,
        ))
    })?;
    Ok((model, log))
}
