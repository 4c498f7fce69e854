//! Recognition of cropped label patches, trained separately from the
//! localizer on a mix of real crops and synthetic pasted glyphs.

use std::path::Path;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::{generate_label_patch, mix_seed, Alphabet, FigureRecord, LabeledBox, PatchConfig, PatchSample, BACKGROUND};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::label_detector::{keep_best_per_class, RawDetection};
use crate::nn::{fit, BackboneConfig, Conv2d, HeadedNet, Parameters, SampleLoss, Schedule, Tensor, TrainLog};
use crate::raster::{crop_patch, image_to_tensor};

pub const MODEL_KIND: &str = "label-classifier";

const REAL_SALT: u64 = 0x5245_414c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_size: u32,
    /// Output classes including background.
    pub num_classes: usize,
    /// Convolutional trunk; its single output stride feeds global pooling.
    pub backbone: BackboneConfig,
    /// Crop growth per side, as a fraction of the box size.
    pub padding: f64,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        if self.backbone.in_channels != 3 || self.backbone.out_strides.len() != 1 {
            return Err(Error::invalid("classifier trunk takes RGB and has one output stride"));
        }
        let s = self.backbone.out_strides[0];
        if self.input_size == 0 || self.input_size as usize % self.backbone.max_stride() != 0 || self.input_size as usize % s != 0 {
            return Err(Error::invalid(format!(
                "input size {} must be a positive multiple of the deepest stride {}",
                self.input_size,
                self.backbone.max_stride()
            )));
        }
        if !(self.padding >= 0.0 && self.padding.is_finite()) {
            return Err(Error::invalid("crop padding must be non-negative"));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let p = softmax(logits);
    let mut g = p;
    g[target] -= 1.0;
    (lse - logits[target], g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelClassifier {
    pub config: ClassifierConfig,
    pub net: HeadedNet,
}

impl Parameters for LabelClassifier {
    fn convs(&self) -> Vec<&Conv2d> {
        self.net.convs().collect()
    }
    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        self.net.convs_mut().collect()
    }
}

impl LabelClassifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = HeadedNet::new(config.backbone.clone(), &[config.num_classes], |_, _| 0.0, &mut rng)?;
        Ok(LabelClassifier { config, net })
    }

    /// The padded, resampled crop the classifier sees for `bbox`.
    pub fn crop(&self, image: &RgbImage, bbox: &BBox) -> Result<RgbImage> {
        crop_patch(image, bbox, self.config.padding, self.config.input_size)
    }

    fn input(&self, patch: &RgbImage) -> Result<Tensor> {
        let n = self.config.input_size;
        if patch.dimensions() != (n, n) {
            return Err(Error::invalid(format!(
                "patch is {}x{}, classifier expects {n}x{n}",
                patch.width(),
                patch.height()
            )));
        }
        image_to_tensor(patch, n as usize, None, 3)
    }

    pub fn logits(&self, patch: &RgbImage) -> Result<Vec<f64>> {
        let x = self.input(patch)?;
        let out = &self.net.heads_on(&self.net.features(&x))[0];
        Ok(pool_logits(out))
    }

    /// Most likely class (0 = background) and the full distribution.
    pub fn classify(&self, patch: &RgbImage) -> Result<(u32, Vec<f64>)> {
        let p = softmax(&self.logits(patch)?);
        Ok((argmax(&p) as u32, p))
    }

    /// Classifies the crop at each detection above `eps`; background crops
    /// are dropped and each class keeps only its most confident box.
    pub fn annotate_detections(&self, image: &RgbImage, detections: &[RawDetection], eps: f64) -> Result<Vec<LabeledBox>> {
        let mut out = Vec::new();
        for d in detections.iter().filter(|d| d.confidence > eps) {
            let patch = match self.crop(image, &d.bbox) {
                Ok(p) => p,
                Err(Error::InvalidArgument(msg)) => {
                    log::debug!("skipping detection: {msg}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (class, _) = self.classify(&patch)?;
            if class != BACKGROUND {
                out.push(LabeledBox {
                    bbox: d.bbox,
                    class,
                    confidence: d.confidence,
                });
            }
        }
        Ok(keep_best_per_class(out))
    }

    /// Mean cross-entropy over samples.
    pub fn mean_loss(&self, samples: &[PatchSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            total += cross_entropy(&self.logits(&s.raster)?, s.target as usize).0;
        }
        Ok(total / samples.len().max(1) as f64)
    }

    /// Accuracy per target class; `None` for classes absent from `samples`.
    pub fn per_class_accuracy(&self, samples: &[PatchSample]) -> Result<Vec<Option<f64>>> {
        let mut hits = vec![0usize; self.config.num_classes];
        let mut seen = vec![0usize; self.config.num_classes];
        for s in samples {
            let (c, _) = self.classify(&s.raster)?;
            seen[s.target as usize] += 1;
            if c == s.target {
                hits[s.target as usize] += 1;
            }
        }
        Ok(hits
            .iter()
            .zip(&seen)
            .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, MODEL_KIND, &self.config, self.net.convs())
    }

    pub fn load(path: &Path, config: &ClassifierConfig) -> Result<Self> {
        let mut model = LabelClassifier::new(config.clone(), 0)?;
        checkpoint::load_into(path, MODEL_KIND, config, model.net.convs_mut())?;
        Ok(model)
    }
}

/// Class logits: the head is linear, so averaging its output map equals
/// applying it to globally pooled features.
fn pool_logits(out: &Tensor) -> Vec<f64> {
    out.data
        .chunks(out.plane())
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / c.len() as f64)
        .collect()
}

/// Endless stream of pasted-glyph patches, indexed deterministically.
#[derive(Debug, Clone)]
pub struct SyntheticStream<'a> {
    pub corpus: &'a [FigureRecord],
    pub alphabet: &'a Alphabet,
    pub patches: PatchConfig,
    pub seed: u64,
}

impl SyntheticStream<'_> {
    pub fn sample(&self, index: u64) -> Result<PatchSample> {
        generate_label_patch(self.corpus, self.alphabet, mix_seed(self.seed, index), &self.patches)
    }

    pub fn take(&self, start: u64, n: usize) -> Result<Vec<PatchSample>> {
        (0..n as u64).map(|k| self.sample(start + k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Synthetic,
}

/// Which source fills each batch slot for a `real:synthetic` ratio.
pub fn batch_sources(batch_size: usize, mix_ratio: (u32, u32)) -> Result<Vec<Source>> {
    let (r, s) = (mix_ratio.0 as usize, mix_ratio.1 as usize);
    if r + s == 0 || batch_size == 0 {
        return Err(Error::invalid("cannot build a batch from a 0:0 mix or zero batch size"));
    }
    let n_real = (batch_size * r + (r + s) / 2) / (r + s);
    Ok((0..batch_size)
        .map(|k| if k < n_real { Source::Real } else { Source::Synthetic })
        .collect())
}

/// Minimizes cross-entropy over batches mixing `real` samples and the
/// synthetic stream at `mix_ratio`.
pub fn train_classifier(
    real: &[PatchSample],
    synthetic: Option<&SyntheticStream>,
    mix_ratio: (u32, u32),
    config: &ClassifierConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(LabelClassifier, TrainLog)> {
    let sources = batch_sources(schedule.batch_size, mix_ratio)?;
    if sources.contains(&Source::Real) && real.is_empty() {
        return Err(Error::EmptyCorpus("the mix asks for real patches but none were given".into()));
    }
    if sources.contains(&Source::Synthetic) && synthetic.is_none() {
        return Err(Error::EmptyCorpus("the mix asks for synthetic patches but no stream was given".into()));
    }
    let mut model = LabelClassifier::new(config.clone(), seed)?;
    let real_inputs: Vec<Tensor> = real.iter().map(|s| model.input(&s.raster)).collect::<Result<_>>()?;
    if let Some(bad) = real.iter().find(|s| s.target as usize >= config.num_classes) {
        return Err(Error::invalid(format!("patch target {} out of range", bad.target)));
    }
    let log = fit(&mut model, schedule, &["l3"], |m: &LabelClassifier, step, slot| {
        let global = (step * schedule.batch_size + slot) as u64;
        let synth_sample;
        let (x, target) = match sources[slot] {
            Source::Real => {
                let k = mix_seed(seed ^ REAL_SALT, global) as usize % real.len();
                (&real_inputs[k], real[k].target)
            }
            Source::Synthetic => {
                let s = synthetic.expect("checked above").sample(global)?;
                synth_sample = (m.input(&s.raster)?, s.target);
                (&synth_sample.0, synth_sample.1)
            }
        };
        if target as usize >= config.num_classes {
            return Err(Error::invalid(format!("patch target {target} out of range")));
        }
        let (outs, cache) = m.net.forward(x);
        let out = &outs[0];
        let (loss, dlogits) = cross_entropy(&pool_logits(out), target as usize);
        let plane = out.plane();
        let mut g = Tensor::zeros(out.c, out.h, out.w);
        for (chunk, d) in g.data.chunks_mut(plane).zip(&dlogits) {
            chunk.fill((*d / plane as f64) as f32);
        }
        let grads = m.net.backward(&cache, &[g]);
        Ok((
            SampleLoss {
                total: loss,
                components: vec![loss],
            },
            grads,
        ))
    })?;
    Ok((model, log))
}
