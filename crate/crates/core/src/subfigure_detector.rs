//! Label-guided subfigure detection.
//!
//! The label boxes are painted into a binary mask that rides along as a
//! fourth input channel. For each label, the feature vector under the label
//! (the "anchor" cell) predicts an auxiliary box whose center points towards
//! the subfigure; the cell under that center (the "latent" cell) then
//! predicts the final box with the same head. One box per label, so the
//! label ↔ subfigure pairing is kept by construction.
//!
//! Box offsets here are unbounded: the center is `(j + 0.5 + tx) / cols`, so
//! a prediction may leave its own cell — a label sits at the edge of its
//! subfigure, far from the center it has to point at.

use std::path::Path;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{jitter_box, mix_seed, Alphabet, FigureRecord, LabeledBox};
use crate::error::{Error, Result};
use crate::geometry::{cells_in_box, iou_unchecked, rasterize_mask, BBox, BinaryMask, Grid, GridCoord};
use crate::label_detector::decode::{bce_with_logit, sigmoid, PredictionMap};
use crate::label_detector::{FeatureGrid, OBJ};
use crate::nn::{fit, BackboneConfig, Conv2d, ConvGrad, HeadedNet, Parameters, SampleLoss, Schedule, Tensor, TrainLog};
use crate::raster::image_to_tensor;

pub const MODEL_KIND: &str = "subfigure-detector";

const FIELDS: usize = 5;
const OBJ_PRIOR_BIAS: f32 = -4.0;
const MAX_SIZE_LOGIT: f64 = 20.0;

/// Where the final box is predicted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Refinement {
    /// Anchor cell → auxiliary box → latent cell → final box.
    Latent,
    /// Final box straight from the anchor cell (ablation baseline).
    AnchorOnly,
}

/// How the cells under a label are reduced to one anchor prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorReduction {
    /// The cell containing the label center.
    CenterCell,
    /// Average over all selected cells.
    Average,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubfigureConfig {
    pub input_resolution: usize,
    /// Backbone with a mask channel (4 inputs) and a single output stride.
    pub backbone: BackboneConfig,
    /// Anchor prior `(w, h)`, normalized.
    pub prior: (f64, f64),
    pub lambda: f64,
    pub ignore_iou: f64,
    /// Detections below this confidence are not reported.
    pub final_conf: f64,
    pub refinement: Refinement,
    pub anchor_reduction: AnchorReduction,
    /// Stage 1 and stage 2 share one head; otherwise stage 1 gets its own.
    pub shared_head: bool,
    /// Training-time label box jitter, as a fraction of the box size, so the
    /// model tolerates imprecise detected labels.
    pub label_jitter: f64,
}

impl SubfigureConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.backbone.in_channels != 4 {
            return Err(Error::invalid("the subfigure backbone takes RGB plus the label mask (4 channels)"));
        }
        if self.backbone.out_strides.len() != 1 {
            return Err(Error::invalid("subfigure detection uses a single scale"));
        }
        if self.input_resolution % self.backbone.max_stride() != 0 {
            return Err(Error::invalid(format!(
                "input resolution {} is not a multiple of the deepest stride {}",
                self.input_resolution,
                self.backbone.max_stride()
            )));
        }
        if !(self.prior.0 > 0.0 && self.prior.1 > 0.0) {
            return Err(Error::invalid("anchor prior must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid(format!("λ = {} must be positive", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.final_conf) || !(self.ignore_iou > 0.0 && self.ignore_iou <= 1.0) {
            return Err(Error::invalid("thresholds out of range"));
        }
        if !(0.0..0.5).contains(&self.label_jitter) {
            return Err(Error::invalid("label jitter must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        let n = self.input_resolution / self.backbone.out_strides[0];
        Grid::new(n, n, 0)
    }
}

/// Box from unbounded offsets relative to the center of `cell`.
pub fn decode_subfigure(t: [f64; 4], cell: GridCoord, grid: &Grid, prior: (f64, f64)) -> BBox {
    BBox {
        x: (cell.j as f64 + 0.5 + t[0]) / grid.cols as f64,
        y: (cell.i as f64 + 0.5 + t[1]) / grid.rows as f64,
        w: prior.0 * t[2].min(MAX_SIZE_LOGIT).exp(),
        h: prior.1 * t[3].min(MAX_SIZE_LOGIT).exp(),
    }
}

pub fn encode_subfigure(b: &BBox, cell: GridCoord, grid: &Grid, prior: (f64, f64)) -> [f64; 4] {
    [
        b.x * grid.cols as f64 - cell.j as f64 - 0.5,
        b.y * grid.rows as f64 - cell.i as f64 - 0.5,
        (b.w / prior.0).ln(),
        (b.h / prior.1).ln(),
    ]
}

/// The label mask: 1 on every pixel whose center lies in a label box.
pub fn build_mask(labels: &[LabeledBox], resolution: usize) -> Result<BinaryMask> {
    rasterize_mask(labels.iter().filter(|l| l.class > 0).map(|l| &l.bbox), resolution, resolution)
}

/// Cells under one label.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSelection {
    pub label: LabeledBox,
    pub cells: Vec<GridCoord>,
    /// The cell containing the label center.
    pub representative: GridCoord,
}

pub fn select_cells(labels: &[LabeledBox], grid: &Grid) -> Vec<AnchorSelection> {
    labels
        .iter()
        .filter(|l| l.class > 0)
        .map(|l| AnchorSelection {
            label: *l,
            cells: cells_in_box(&l.bbox, grid),
            representative: grid.cell_of_clamped(l.bbox.x, l.bbox.y),
        })
        .collect()
}

/// One selection per labelled (class > 0) box.
pub fn select_anchor_features(features: &FeatureGrid, labels: &[LabeledBox]) -> Vec<AnchorSelection> {
    select_cells(labels, &features.grid(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedDetection {
    pub label: LabeledBox,
    pub aux_box: BBox,
    pub aux_conf: f64,
    pub latent_cell: GridCoord,
    pub bbox: BBox,
    pub confidence: f64,
    /// Set when the auxiliary box was unusable; confidence is then 0.
    pub degenerate: bool,
}

/// Raw stage-1 outputs for a selection: the representative cell, or the
/// mean over the selected cells.
fn anchor_raw(map: &PredictionMap, sel: &AnchorSelection, reduction: AnchorReduction) -> [f64; FIELDS] {
    match reduction {
        AnchorReduction::CenterCell => std::array::from_fn(|f| map.get(0, f, sel.representative)),
        AnchorReduction::Average => {
            let n = sel.cells.len() as f64;
            std::array::from_fn(|f| sel.cells.iter().map(|&c| map.get(0, f, c)).sum::<f64>() / n)
        }
    }
}

fn offsets(raw: &[f64; FIELDS]) -> [f64; 4] {
    [raw[0], raw[1], raw[2], raw[3]]
}

/// Two-stage decode of one selection from the head outputs.
pub fn refine_from_maps(
    main: &PredictionMap,
    aux: Option<&PredictionMap>,
    sel: &AnchorSelection,
    config: &SubfigureConfig,
) -> RefinedDetection {
    let stage1 = aux.unwrap_or(main);
    let grid = main.grid;
    let raw = anchor_raw(stage1, sel, config.anchor_reduction);
    let aux_box = decode_subfigure(offsets(&raw), sel.representative, &grid, config.prior);
    let aux_conf = sigmoid(raw[OBJ]);
    if config.refinement == Refinement::AnchorOnly {
        return RefinedDetection {
            label: sel.label,
            aux_box,
            aux_conf,
            latent_cell: sel.representative,
            bbox: aux_box,
            confidence: aux_conf,
            degenerate: false,
        };
    }
    let usable = [aux_box.x, aux_box.y].iter().all(|v| v.is_finite()) && aux_box.validate().is_ok();
    if !usable {
        return RefinedDetection {
            label: sel.label,
            aux_box,
            aux_conf,
            latent_cell: sel.representative,
            bbox: aux_box,
            confidence: 0.0,
            degenerate: true,
        };
    }
    let latent = grid.cell_of_clamped(aux_box.x, aux_box.y);
    let t = main.offsets(0, latent);
    RefinedDetection {
        label: sel.label,
        aux_box,
        aux_conf,
        latent_cell: latent,
        bbox: decode_subfigure(t, latent, &grid, config.prior),
        confidence: sigmoid(main.get(0, OBJ, latent)),
        degenerate: false,
    }
}

/// Loss terms and gradients for the stage-2 (main) and, with separate
/// heads, stage-1 maps.
#[derive(Debug, Clone, PartialEq)]
pub struct SubfigureLoss {
    pub l4: f64,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub grad_main: Vec<f64>,
    pub grad_aux: Option<Vec<f64>>,
}

/// `L4 + L1 + λ·L2` over `(label, subfigure)` pairs.
///
/// L4 is the squared distance, in cells and averaged over the two axes,
/// between each auxiliary center and its subfigure center. L1 regresses the
/// box predicted at the latent cell (hard lookup: no gradient flows through
/// the choice of cell). L2 is confidence cross-entropy, positive at the
/// cells that produced final boxes, negative elsewhere except where a
/// prediction already overlaps a subfigure above `ignore_iou`. With
/// anchor-only refinement the final box comes from the anchor and there is
/// no L4.
pub fn subfigure_loss(
    main: &PredictionMap,
    aux: Option<&PredictionMap>,
    pairs: &[(LabeledBox, BBox)],
    config: &SubfigureConfig,
) -> Result<SubfigureLoss> {
    for (_, g) in pairs {
        g.validate()?;
    }
    let grid = main.grid;
    let cols = grid.cols as f64;
    let rows = grid.rows as f64;
    let prior = config.prior;
    let mut grad_main = vec![0.0; main.values.len()];
    let mut grad_aux = aux.map(|a| vec![0.0; a.values.len()]);
    let (mut l4, mut l1, mut l2) = (0.0, 0.0, 0.0);
    // (cell, fields pre-reduction weights) of every positive prediction
    let mut positive_cells = vec![false; grid.len()];

    let labels: Vec<LabeledBox> = pairs.iter().map(|p| p.0).collect();
    let selections = select_cells(&labels, &grid);
    if selections.len() != pairs.len() {
        return Err(Error::invalid("every training pair needs a label with class > 0"));
    }

    // Adds `d` to the gradient of every raw value behind a stage-1 output.
    let add_stage1 = |grad_main: &mut Vec<f64>, grad_aux: &mut Option<Vec<f64>>, sel: &AnchorSelection, field: usize, d: f64| {
        let (target, map) = match grad_aux {
            Some(g) => (g, aux.expect("aux map with aux grads")),
            None => (grad_main, main),
        };
        match config.anchor_reduction {
            AnchorReduction::CenterCell => target[map.index(0, field, sel.representative)] += d,
            AnchorReduction::Average => {
                let n = sel.cells.len() as f64;
                for &c in &sel.cells {
                    target[map.index(0, field, c)] += d / n;
                }
            }
        }
    };

    for (sel, (_, gt)) in selections.iter().zip(pairs) {
        let stage1 = aux.unwrap_or(main);
        let raw = anchor_raw(stage1, sel, config.anchor_reduction);
        let target = encode_subfigure(gt, sel.representative, &grid, prior);
        match config.refinement {
            Refinement::Latent => {
                // aux center vs subfigure center, in cells
                for (f, axis) in [(0, cols), (1, rows)] {
                    let center = if f == 0 {
                        sel.representative.j as f64 + 0.5 + raw[0]
                    } else {
                        sel.representative.i as f64 + 0.5 + raw[1]
                    };
                    let goal = if f == 0 { gt.x * axis } else { gt.y * axis };
                    let d = center - goal;
                    l4 += 0.5 * d * d;
                    add_stage1(&mut grad_main, &mut grad_aux, sel, f, d);
                }
                let aux_box = decode_subfigure(offsets(&raw), sel.representative, &grid, prior);
                let latent = grid.cell_of_clamped(aux_box.x, aux_box.y);
                let t = encode_subfigure(gt, latent, &grid, prior);
                for f in 0..4 {
                    let k = main.index(0, f, latent);
                    let d = main.values[k] - t[f];
                    l1 += d * d;
                    grad_main[k] += 2.0 * d;
                }
                if !positive_cells[grid.index(latent)] {
                    positive_cells[grid.index(latent)] = true;
                    let k = main.index(0, OBJ, latent);
                    let (l, d) = bce_with_logit(main.values[k], 1.0);
                    l2 += l;
                    grad_main[k] += config.lambda * d;
                }
            }
            Refinement::AnchorOnly => {
                for f in 0..4 {
                    let d = raw[f] - target[f];
                    l1 += d * d;
                    add_stage1(&mut grad_main, &mut grad_aux, sel, f, 2.0 * d);
                }
                let (l, d) = bce_with_logit(raw[OBJ], 1.0);
                l2 += l;
                add_stage1(&mut grad_main, &mut grad_aux, sel, OBJ, config.lambda * d);
                for &c in &sel.cells {
                    positive_cells[grid.index(c)] = true;
                }
                positive_cells[grid.index(sel.representative)] = true;
            }
        }
    }

    for cell in main.cells() {
        if positive_cells[grid.index(cell)] {
            continue;
        }
        let pred = decode_subfigure(main.offsets(0, cell), cell, &grid, prior);
        if pairs.iter().any(|(_, g)| iou_unchecked(&pred, g) > config.ignore_iou) {
            continue;
        }
        let k = main.index(0, OBJ, cell);
        let (l, d) = bce_with_logit(main.values[k], 0.0);
        l2 += l;
        grad_main[k] += config.lambda * d;
    }

    Ok(SubfigureLoss {
        l4,
        l1,
        l2,
        total: l4 + l1 + config.lambda * l2,
        grad_main,
        grad_aux,
    })
}

/// Final subfigure with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedSubfigure {
    pub class: u32,
    pub confidence: f64,
    pub bbox: BBox,
    pub label_box: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub image_id: String,
    pub subfigures: Vec<DetectedSubfigure>,
}

#[derive(Serialize, Deserialize)]
struct SubfigureJson {
    class: String,
    conf: f64,
    #[serde(rename = "box")]
    bbox: BBox,
    label_box: BBox,
}

#[derive(Serialize, Deserialize)]
struct ResultJson {
    image_id: String,
    subfigures: Vec<SubfigureJson>,
}

impl DetectionResult {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.subfigures {
            if !seen.insert(s.class) {
                return Err(Error::InvalidRecord {
                    image_id: self.image_id.clone(),
                    message: format!("label class {} appears twice", s.class),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self, alphabet: &Alphabet) -> Result<String> {
        let doc = ResultJson {
            image_id: self.image_id.clone(),
            subfigures: self
                .subfigures
                .iter()
                .map(|s| {
                    Ok(SubfigureJson {
                        class: alphabet
                            .glyph(s.class)
                            .ok_or_else(|| Error::invalid(format!("class {} not in the alphabet", s.class)))?
                            .to_string(),
                        conf: s.confidence,
                        bbox: s.bbox,
                        label_box: s.label_box,
                    })
                })
                .collect::<Result<_>>()?,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str, alphabet: &Alphabet) -> Result<Self> {
        let doc: ResultJson = serde_json::from_str(text)?;
        let subfigures = doc
            .subfigures
            .into_iter()
            .map(|s| {
                Ok(DetectedSubfigure {
                    class: alphabet
                        .id_of(&s.class)
                        .ok_or_else(|| Error::invalid(format!("unknown label class `{}`", s.class)))?,
                    confidence: s.conf,
                    bbox: s.bbox,
                    label_box: s.label_box,
                })
            })
            .collect::<Result<_>>()?;
        let r = DetectionResult {
            image_id: doc.image_id,
            subfigures,
        };
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubfigureDetector {
    pub config: SubfigureConfig,
    pub net: HeadedNet,
    /// Stage-1 head when heads are not shared.
    pub aux_head: Option<Conv2d>,
}

impl Parameters for SubfigureDetector {
    fn convs(&self) -> Vec<&Conv2d> {
        self.net.convs().chain(self.aux_head.iter()).collect()
    }
    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        self.net.convs_mut().chain(self.aux_head.iter_mut()).collect()
    }
}

impl SubfigureDetector {
    pub fn new(config: SubfigureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bias = |_, c: usize| if c == OBJ { OBJ_PRIOR_BIAS } else { 0.0 };
        let net = HeadedNet::new(config.backbone.clone(), &[FIELDS], bias, &mut rng)?;
        let aux_head = (!config.shared_head).then(|| {
            let mut h = Conv2d::new_head(config.backbone.neck_width, FIELDS, &mut rng);
            h.bias[OBJ] = OBJ_PRIOR_BIAS;
            h
        });
        Ok(SubfigureDetector { config, net, aux_head })
    }

    pub fn input_tensor(&self, image: &RgbImage, mask: &BinaryMask) -> Result<Tensor> {
        image_to_tensor(image, self.config.input_resolution, Some(mask), 4)
    }

    pub fn extract_features(&self, image: &RgbImage, mask: &BinaryMask) -> Result<FeatureGrid> {
        let x = self.input_tensor(image, mask)?;
        Ok(FeatureGrid {
            scales: self.net.features(&x),
            strides: self.config.backbone.out_strides.clone(),
        })
    }

    fn map_of(&self, t: &Tensor) -> PredictionMap {
        PredictionMap::from_tensor(t, self.config.grid(), vec![self.config.prior], FIELDS)
    }

    fn maps(&self, features: &FeatureGrid) -> (PredictionMap, Option<PredictionMap>) {
        let main = self.map_of(&self.net.heads_on(&features.scales)[0]);
        let aux = self.aux_head.as_ref().map(|h| self.map_of(&h.forward(&features.scales[0]).0));
        (main, aux)
    }

    pub fn refine(&self, features: &FeatureGrid, selection: &AnchorSelection) -> RefinedDetection {
        let (main, aux) = self.maps(features);
        refine_from_maps(&main, aux.as_ref(), selection, &self.config)
    }

    /// One refined detection per labelled box, in label order, before any
    /// confidence filtering.
    pub fn detect_candidates(&self, image: &RgbImage, labels: &[LabeledBox]) -> Result<Vec<RefinedDetection>> {
        let labels: Vec<LabeledBox> = labels.iter().filter(|l| l.class > 0).copied().collect();
        if labels.is_empty() {
            return Ok(Vec::new());
        }
        let mask = build_mask(&labels, self.config.input_resolution)?;
        let features = self.extract_features(image, &mask)?;
        let (main, aux) = self.maps(&features);
        Ok(select_anchor_features(&features, &labels)
            .iter()
            .map(|s| refine_from_maps(&main, aux.as_ref(), s, &self.config))
            .collect())
    }

    /// Subfigures for `labels`, dropping those below the final confidence.
    pub fn detect(&self, image_id: &str, image: &RgbImage, labels: &[LabeledBox]) -> Result<DetectionResult> {
        let subfigures = self
            .detect_candidates(image, labels)?
            .into_iter()
            .filter(|d| d.confidence >= self.config.final_conf)
            .map(|d| DetectedSubfigure {
                class: d.label.class,
                confidence: d.confidence,
                bbox: d.bbox,
                label_box: d.label.bbox,
            })
            .collect();
        let r = DetectionResult {
            image_id: image_id.to_string(),
            subfigures,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, MODEL_KIND, &self.config, self.convs())
    }

    pub fn load(path: &Path, config: &SubfigureConfig) -> Result<Self> {
        let mut model = SubfigureDetector::new(config.clone(), 0)?;
        checkpoint::load_into(path, MODEL_KIND, config, model.convs_mut())?;
        Ok(model)
    }
}

struct Prepared {
    rgb: Tensor,
    pairs: Vec<(LabeledBox, BBox)>,
}

/// Trains on ground-truth labels: the mask and the anchor cells come from the
/// annotated label boxes (lightly jittered), never from a label detector.
pub fn train_subfigure_detector(
    corpus: &[FigureRecord],
    config: &SubfigureConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(SubfigureDetector, TrainLog)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("subfigure detector training needs at least one figure".into()));
    }
    let mut model = SubfigureDetector::new(config.clone(), seed)?;
    let res = config.input_resolution;
    let data: Vec<Prepared> = corpus
        .iter()
        .map(|r| {
            Ok(Prepared {
                rgb: image_to_tensor(&r.image, res, None, 3)?,
                pairs: r.pairs().into_iter().map(|(l, s)| (l, s.bbox)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let log = fit(&mut model, schedule, &["l4", "l1", "l2"], |m: &SubfigureDetector, step, slot| {
        let global = (step * schedule.batch_size + slot) as u64;
        let item = &data[mix_seed(seed, global) as usize % data.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x4a49_5454, global));
        let pairs: Vec<(LabeledBox, BBox)> = item
            .pairs
            .iter()
            .map(|(l, s)| {
                let mut l = *l;
                l.bbox = jitter_box(&l.bbox, config.label_jitter, &mut rng);
                (l, *s)
            })
            .collect();
        let labels: Vec<LabeledBox> = pairs.iter().map(|p| p.0).collect();
        let mask = build_mask(&labels, res)?;
        let mut x = Tensor::zeros(4, res, res);
        let plane = res * res;
        x.data[..3 * plane].copy_from_slice(&item.rgb.data);
        for (d, &v) in x.data[3 * plane..].iter_mut().zip(mask.values()) {
            *d = v as f32;
        }
        let (feats, bcache) = m.net.backbone.forward(&x);
        let head = &m.net.heads[0];
        let (out, hcache) = head.forward(&feats[0]);
        let main = m.map_of(&out);
        let aux_out = m.aux_head.as_ref().map(|h| h.forward(&feats[0]));
        let aux = aux_out.as_ref().map(|(t, _)| m.map_of(t));
        let loss = subfigure_loss(&main, aux.as_ref(), &pairs, config)?;

        let mut grads: Vec<ConvGrad> = m.convs().into_iter().map(ConvGrad::zeros_like).collect();
        let nb = m.net.backbone.convs.len();
        let (bgrads, rest) = grads.split_at_mut(nb);
        let hg = &mut rest[0];
        let mut feat_grad = head
            .backward(&hcache, &main.to_tensor(&loss.grad_main), &mut hg.w, &mut hg.b, true)
            .expect("input gradient requested");
        if let (Some(h), Some((_, ac)), Some(ga)) = (&m.aux_head, &aux_out, &loss.grad_aux) {
            let ag = &mut rest[1];
            let fg = h
                .backward(ac, &main.to_tensor(ga), &mut ag.w, &mut ag.b, true)
                .expect("input gradient requested");
            feat_grad.add_assign(&fg);
        }
        m.net.backbone.backward(&bcache, &[feat_grad], bgrads);
        Ok((
            SampleLoss {
                total: loss.total,
                components: vec![loss.l4, loss.l1, loss.l2],
            },
            grads,
        ))
    })?;
    Ok((model, log))
}
