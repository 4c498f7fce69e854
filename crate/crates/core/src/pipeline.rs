//! The end-to-end workflow behind the command-line tool: corpus generation,
//! the three training stages, two-stage separation, evaluation and the
//! ablations. Every stage writes a manifest echoing the full configuration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::config::{LabelSource, PipelineConfig, SeedStream};
use crate::dataset::glyph::font_names;
use crate::dataset::{
    generate_corpus, load_corpus, real_label_patches, save_corpus, Alphabet, FigureRecord, LabeledBox, ANNOTATIONS_FILE,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    ablation_report, AblationTable, ApOptions, GroundTruth, ImageDetections, NamedRun, Prediction, SeparationReport,
};
use crate::geometry::BBox;
use crate::label_classifier::{train_classifier, LabelClassifier, SyntheticStream};
use crate::label_detector::{train_localizer, LabelDetector};
use crate::nn::TrainLog;
use crate::raster::{box_to_pixels, crop};
use crate::subfigure_detector::{train_subfigure_detector, DetectionResult, Refinement, SubfigureDetector};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    LabelDetector,
    LabelClassifier,
    SubfigureDetector,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::LabelDetector, Stage::LabelClassifier, Stage::SubfigureDetector];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::LabelDetector => "label-detector",
            Stage::LabelClassifier => "label-classifier",
            Stage::SubfigureDetector => "subfigure-detector",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

pub fn checkpoint_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.paths.checkpoints.join(format!("{name}.ckpt"))
}

pub fn loss_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.paths.checkpoints.join(format!("{name}.loss.csv"))
}

fn is_nonempty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Makes `dir` an empty directory, refusing to clear existing content
/// unless `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if is_nonempty_dir(dir) {
        if !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_manifest(path: &Path, command: &str, cfg: &PipelineConfig, details: serde_json::Value) -> Result<()> {
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "details": details,
        "config": cfg,
    });
    write_file(path, serde_json::to_string_pretty(&doc)?)
}

pub fn load_split(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<FigureRecord>> {
    if !dir.join(ANNOTATIONS_FILE).is_file() {
        return Err(Error::Missing(format!(
            "no corpus at {} (run `generate` first)",
            dir.display()
        )));
    }
    load_corpus(dir, &cfg.corpus.alphabet()?)
}

/// Writes the train and test corpora.
pub fn generate(cfg: &PipelineConfig, force: bool) -> Result<(Vec<FigureRecord>, Vec<FigureRecord>)> {
    cfg.validate()?;
    let alphabet = cfg.corpus.alphabet()?;
    let train_seed = cfg.seed_for(SeedStream::TrainCorpus);
    let test_seed = cfg.seed_for(SeedStream::TestCorpus);
    let train = generate_corpus(&cfg.corpus.spec(cfg.corpus.n_train, "train-")?, train_seed)?;
    let test = generate_corpus(&cfg.corpus.spec(cfg.corpus.n_test, "test-")?, test_seed)?;
    prepare_output_dir(&cfg.paths.corpus, force)?;
    save_corpus(&train, &cfg.paths.train_corpus(), &alphabet)?;
    save_corpus(&test, &cfg.paths.test_corpus(), &alphabet)?;
    write_manifest(
        &cfg.paths.corpus.join(MANIFEST_FILE),
        "generate",
        cfg,
        serde_json::json!({
            "train": {"count": train.len(), "seed": train_seed},
            "test": {"count": test.len(), "seed": test_seed},
            "fonts": font_names(),
        }),
    )?;
    Ok((train, test))
}

fn guard_checkpoint(cfg: &PipelineConfig, name: &str, force: bool) -> Result<()> {
    let p = checkpoint_path(cfg, name);
    if p.exists() && !force {
        return Err(Error::OutputExists(p));
    }
    Ok(())
}

fn finish_stage(cfg: &PipelineConfig, name: &str, log: &TrainLog, seed: u64, param_count: usize) -> Result<()> {
    write_file(&loss_path(cfg, name), log.to_csv())?;
    write_manifest(
        &cfg.paths.checkpoints.join(format!("{name}.{MANIFEST_FILE}")),
        &format!("train {name}"),
        cfg,
        serde_json::json!({ "seed": seed, "steps": log.records.len(), "param_count": param_count }),
    )
}

pub fn train_label_detector(cfg: &PipelineConfig, train: &[FigureRecord]) -> Result<(LabelDetector, TrainLog)> {
    train_localizer(
        train,
        &cfg.label_detector,
        &cfg.schedules.label_detector,
        cfg.seed_for(SeedStream::LabelDetector),
    )
}

pub fn train_label_classifier(cfg: &PipelineConfig, train: &[FigureRecord]) -> Result<(LabelClassifier, TrainLog)> {
    let alphabet = cfg.corpus.alphabet()?;
    let data = &cfg.classifier_data;
    let patch_seed = cfg.seed_for(SeedStream::ClassifierPatches);
    let real = real_label_patches(train, &data.patches, data.real_copies, patch_seed)?;
    let stream = SyntheticStream {
        corpus: train,
        alphabet: &alphabet,
        patches: data.patches.clone(),
        seed: patch_seed ^ 0x5359_4e54,
    };
    let synthetic = (!train.is_empty()).then_some(&stream);
    train_classifier(
        &real,
        synthetic,
        data.mix_ratio,
        &cfg.label_classifier,
        &cfg.schedules.label_classifier,
        cfg.seed_for(SeedStream::LabelClassifier),
    )
}

/// Subfigure detector with the configured refinement, or another one for
/// the ablation.
pub fn train_subfigure_stage(
    cfg: &PipelineConfig,
    train: &[FigureRecord],
    refinement: Refinement,
) -> Result<(SubfigureDetector, TrainLog)> {
    let mut sc = cfg.subfigure_detector.clone();
    sc.refinement = refinement;
    train_subfigure_detector(
        train,
        &sc,
        &cfg.schedules.subfigure_detector,
        cfg.seed_for(SeedStream::SubfigureDetector),
    )
}

/// Localizer with per-class outputs trained jointly: the baseline the
/// decoupled detector + classifier is compared against. Same backbone,
/// schedule and seed as the decoupled localizer.
pub fn train_end_to_end(cfg: &PipelineConfig, train: &[FigureRecord]) -> Result<(LabelDetector, TrainLog)> {
    let mut dc = cfg.label_detector.clone();
    dc.num_classes = cfg.corpus.alphabet()?.len();
    train_localizer(train, &dc, &cfg.schedules.label_detector, cfg.seed_for(SeedStream::LabelDetector))
}

/// Trains one stage on the train corpus; writes the checkpoint, the loss
/// curve and a manifest.
pub fn train_stage(cfg: &PipelineConfig, stage: Stage, force: bool) -> Result<TrainLog> {
    cfg.validate()?;
    let name = stage.name();
    guard_checkpoint(cfg, name, force)?;
    let train = load_split(cfg, &cfg.paths.train_corpus())?;
    let path = checkpoint_path(cfg, name);
    let (log, seed, params) = match stage {
        Stage::LabelDetector => {
            let (m, log) = train_label_detector(cfg, &train)?;
            m.save(&path)?;
            (log, cfg.seed_for(SeedStream::LabelDetector), m.net.param_count())
        }
        Stage::LabelClassifier => {
            let (m, log) = train_label_classifier(cfg, &train)?;
            m.save(&path)?;
            (log, cfg.seed_for(SeedStream::LabelClassifier), m.net.param_count())
        }
        Stage::SubfigureDetector => {
            let (m, log) = train_subfigure_stage(cfg, &train, cfg.subfigure_detector.refinement)?;
            m.save(&path)?;
            (log, cfg.seed_for(SeedStream::SubfigureDetector), m.net.param_count())
        }
    };
    finish_stage(cfg, name, &log, seed, params)?;
    Ok(log)
}

/// The three trained models.
pub struct Models {
    pub detector: LabelDetector,
    pub classifier: LabelClassifier,
    pub subfigure: SubfigureDetector,
}

impl Models {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let need = |stage: Stage| {
            let p = checkpoint_path(cfg, stage.name());
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Missing(format!(
                    "{} checkpoint at {} (run `train {}` first)",
                    stage.name(),
                    p.display(),
                    stage.name()
                )))
            }
        };
        Ok(Models {
            detector: LabelDetector::load(&need(Stage::LabelDetector)?, &cfg.label_detector)?,
            classifier: LabelClassifier::load(&need(Stage::LabelClassifier)?, &cfg.label_classifier)?,
            subfigure: SubfigureDetector::load(&need(Stage::SubfigureDetector)?, &cfg.subfigure_detector)?,
        })
    }
}

/// Localize, cull, classify.
pub fn detect_labels(detector: &LabelDetector, classifier: &LabelClassifier, image: &RgbImage) -> Result<Vec<LabeledBox>> {
    let dets = detector.detect(image)?;
    classifier.annotate_detections(image, &dets, detector.config.conf_threshold)
}

/// Labels and subfigures found in one figure.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub labels: Vec<LabeledBox>,
    pub result: DetectionResult,
}

pub fn separate_image(models: &Models, image_id: &str, image: &RgbImage) -> Result<Separation> {
    let labels = detect_labels(&models.detector, &models.classifier, image)?;
    let result = models.subfigure.detect(image_id, image, &labels)?;
    Ok(Separation { labels, result })
}

#[derive(Serialize, Deserialize)]
struct LabelJson {
    class: String,
    conf: f64,
    #[serde(rename = "box")]
    bbox: BBox,
}

#[derive(Serialize, Deserialize)]
struct LabelsFile {
    image_id: String,
    labels: Vec<LabelJson>,
}

pub fn labels_to_json(image_id: &str, labels: &[LabeledBox], alphabet: &Alphabet) -> Result<String> {
    let doc = LabelsFile {
        image_id: image_id.to_string(),
        labels: labels
            .iter()
            .map(|l| {
                Ok(LabelJson {
                    class: alphabet
                        .glyph(l.class)
                        .ok_or_else(|| Error::invalid(format!("class {} not in the alphabet", l.class)))?
                        .to_string(),
                    conf: l.confidence,
                    bbox: l.bbox,
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn labels_from_json(text: &str, alphabet: &Alphabet) -> Result<(String, Vec<LabeledBox>)> {
    let doc: LabelsFile = serde_json::from_str(text)?;
    let labels = doc
        .labels
        .into_iter()
        .map(|l| {
            Ok(LabeledBox {
                bbox: l.bbox,
                class: alphabet
                    .id_of(&l.class)
                    .ok_or_else(|| Error::invalid(format!("unknown label class `{}`", l.class)))?,
                confidence: l.conf,
            })
        })
        .collect::<Result<_>>()?;
    Ok((doc.image_id, labels))
}

/// Images to separate: one file, a corpus directory, or a directory of
/// PNGs (sorted by name). Image ids are file stems.
pub fn read_inputs(cfg: &PipelineConfig, input: &Path) -> Result<Vec<(String, RgbImage)>> {
    let read_one = |p: &Path| -> Result<(String, RgbImage)> {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::invalid(format!("cannot derive an image id from {}", p.display())))?
            .to_string();
        let img = image::open(p).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(p, io),
            other => Error::Image(other),
        })?;
        Ok((id, img.to_rgb8()))
    };
    if input.is_file() {
        return Ok(vec![read_one(input)?]);
    }
    if !input.is_dir() {
        return Err(Error::Missing(format!("input {} does not exist", input.display())));
    }
    if input.join(ANNOTATIONS_FILE).is_file() {
        return Ok(load_split(cfg, input)?.into_iter().map(|r| (r.image_id, r.image)).collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    files.iter().map(|p| read_one(p)).collect()
}

pub const RESULTS_DIR: &str = "results";
pub const LABELS_DIR: &str = "labels";
pub const CROPS_DIR: &str = "crops";

/// File name of a subfigure crop: `<image_id>_<class>.png`.
pub fn crop_name(image_id: &str, glyph: &str) -> String {
    format!("{image_id}_{glyph}.png")
}

#[cfg(feature = "parallel")]
fn map_images<T: Send>(
    inputs: &[(String, RgbImage)],
    f: impl Fn(&str, &RgbImage) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    inputs.par_iter().map(|(id, img)| f(id, img)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_images<T: Send>(inputs: &[(String, RgbImage)], f: impl Fn(&str, &RgbImage) -> Result<T>) -> Result<Vec<T>> {
    inputs.iter().map(|(id, img)| f(id, img)).collect()
}

/// Runs both stages over `input` and writes, under `out_dir`:
/// `results/<id>.json` (subfigures with their labels), `labels/<id>.json`
/// (every classified label) and `crops/<id>_<class>.png`.
pub fn separate(cfg: &PipelineConfig, input: &Path, out_dir: &Path, force: bool) -> Result<Vec<Separation>> {
    cfg.validate()?;
    let alphabet = cfg.corpus.alphabet()?;
    let models = Models::load(cfg)?;
    let inputs = read_inputs(cfg, input)?;
    let mut seen = std::collections::HashSet::new();
    if let Some((dup, _)) = inputs.iter().find(|(id, _)| !seen.insert(id.clone())) {
        return Err(Error::invalid(format!("duplicate image id `{dup}` in the input")));
    }
    prepare_output_dir(out_dir, force)?;
    let separations = map_images(&inputs, |id, img| separate_image(&models, id, img))?;
    let mut n_crops = 0;
    for ((id, img), sep) in inputs.iter().zip(&separations) {
        write_file(&out_dir.join(RESULTS_DIR).join(format!("{id}.json")), sep.result.to_json(&alphabet)?)?;
        write_file(
            &out_dir.join(LABELS_DIR).join(format!("{id}.json")),
            labels_to_json(id, &sep.labels, &alphabet)?,
        )?;
        for s in &sep.result.subfigures {
            let Some(rect) = box_to_pixels(&s.bbox, img.width(), img.height()) else {
                log::warn!("{id}: subfigure {} lies outside the image; no crop", s.class);
                continue;
            };
            let glyph = alphabet.glyph(s.class).unwrap_or("?");
            let path = out_dir.join(CROPS_DIR).join(crop_name(id, glyph));
            fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::io(&path, e))?;
            crop(img, &rect).save_with_format(&path, image::ImageFormat::Png)?;
            n_crops += 1;
        }
    }
    write_manifest(
        &out_dir.join(MANIFEST_FILE),
        "separate",
        cfg,
        serde_json::json!({ "input": input, "images": inputs.len(), "crops": n_crops }),
    )?;
    Ok(separations)
}

fn read_json_dir<T>(dir: &Path, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| parse(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?))
        .collect()
}

pub fn subfigure_ground_truth(r: &FigureRecord) -> Vec<GroundTruth> {
    r.subfig_boxes
        .iter()
        .map(|s| GroundTruth {
            bbox: s.bbox,
            class: Some(s.class),
        })
        .collect()
}

pub fn label_ground_truth(r: &FigureRecord) -> Vec<GroundTruth> {
    r.label_boxes
        .iter()
        .map(|l| GroundTruth {
            bbox: l.bbox,
            class: Some(l.class),
        })
        .collect()
}

pub fn subfigure_predictions(result: &DetectionResult) -> Vec<Prediction> {
    result
        .subfigures
        .iter()
        .map(|s| Prediction {
            bbox: s.bbox,
            confidence: s.confidence,
            class: Some(s.class),
        })
        .collect()
}

pub fn label_predictions(labels: &[LabeledBox]) -> Vec<Prediction> {
    labels
        .iter()
        .map(|l| Prediction {
            bbox: l.bbox,
            confidence: l.confidence,
            class: Some(l.class),
        })
        .collect()
}

/// Joins per-image predictions with the ground truth in corpus order;
/// images without predictions count as empty. Predictions for an image
/// outside the corpus are an error.
pub fn join_with_ground_truth(
    gt: &[FigureRecord],
    preds: HashMap<String, Vec<Prediction>>,
    truth: impl Fn(&FigureRecord) -> Vec<GroundTruth>,
) -> Result<Vec<ImageDetections>> {
    let known: std::collections::HashSet<&str> = gt.iter().map(|r| r.image_id.as_str()).collect();
    let mut unknown: Vec<&String> = preds.keys().filter(|k| !known.contains(k.as_str())).collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(Error::Missing(format!("no ground truth for image `{}`", unknown[0])));
    }
    let mut preds = preds;
    Ok(gt
        .iter()
        .map(|r| ImageDetections {
            image_id: r.image_id.clone(),
            preds: preds.remove(&r.image_id).unwrap_or_default(),
            gts: truth(r),
        })
        .collect())
}

pub fn ap_options(cfg: &PipelineConfig) -> ApOptions {
    ApOptions {
        class_aware: cfg.evaluation.class_aware,
        interpolation: cfg.evaluation.interpolation,
    }
}

/// Report for in-memory separations of `gt`'s images.
pub fn report_for(cfg: &PipelineConfig, gt: &[FigureRecord], separations: &[Separation]) -> Result<SeparationReport> {
    let sub: HashMap<String, Vec<Prediction>> = separations
        .iter()
        .map(|s| (s.result.image_id.clone(), subfigure_predictions(&s.result)))
        .collect();
    let lab: HashMap<String, Vec<Prediction>> = separations
        .iter()
        .map(|s| (s.result.image_id.clone(), label_predictions(&s.labels)))
        .collect();
    SeparationReport::compute(
        &join_with_ground_truth(gt, sub, subfigure_ground_truth)?,
        &join_with_ground_truth(gt, lab, label_ground_truth)?,
        ap_options(cfg),
    )
}

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

/// Scores a `separate` output directory against a corpus and writes
/// `report.txt` / `report.csv` next to the results.
pub fn evaluate(cfg: &PipelineConfig, results_dir: &Path, gt_dir: &Path) -> Result<SeparationReport> {
    let alphabet = cfg.corpus.alphabet()?;
    let gt = load_split(cfg, gt_dir)?;
    if !results_dir.is_dir() {
        return Err(Error::Missing(format!("no results at {}", results_dir.display())));
    }
    let results = read_json_dir(&results_dir.join(RESULTS_DIR), |t| DetectionResult::from_json(t, &alphabet))?;
    let labels = read_json_dir(&results_dir.join(LABELS_DIR), |t| labels_from_json(t, &alphabet))?;
    let sub: HashMap<String, Vec<Prediction>> = results
        .iter()
        .map(|r| (r.image_id.clone(), subfigure_predictions(r)))
        .collect();
    let lab: HashMap<String, Vec<Prediction>> = labels
        .iter()
        .map(|(id, l)| (id.clone(), label_predictions(l)))
        .collect();
    let report = SeparationReport::compute(
        &join_with_ground_truth(&gt, sub, subfigure_ground_truth)?,
        &join_with_ground_truth(&gt, lab, label_ground_truth)?,
        ap_options(cfg),
    )?;
    write_file(&results_dir.join(REPORT_TXT), format!("{report}\n"))?;
    write_file(&results_dir.join(REPORT_CSV), report.to_csv())?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Decoupling,
    Latent,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decoupling" => Ok(Ablation::Decoupling),
            "latent" => Ok(Ablation::Latent),
            other => Err(Error::invalid(format!("unknown ablation `{other}` (decoupling, latent)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::Decoupling => "decoupling",
            Ablation::Latent => "latent",
        }
    }
}

pub fn class_names(alphabet: &Alphabet) -> Vec<(u32, String)> {
    alphabet.classes().iter().map(|c| (c.id, c.glyph.clone())).collect()
}

/// Classes at most a tenth as frequent as the most frequent one.
pub fn rare_classes(cfg: &PipelineConfig) -> Vec<String> {
    let top = cfg.corpus.profile.iter().copied().fold(0.0, f64::max);
    cfg.corpus
        .alphabet
        .iter()
        .zip(&cfg.corpus.profile)
        .filter(|(_, &w)| w <= 0.1 * top + 1e-12)
        .map(|(g, _)| g.clone())
        .collect()
}

pub fn gt_runs(corpus: &[FigureRecord], truth: impl Fn(&FigureRecord) -> Vec<GroundTruth>) -> Vec<(String, Vec<GroundTruth>)> {
    corpus.iter().map(|r| (r.image_id.clone(), truth(r))).collect()
}

/// Decoupled labels (localizer + classifier) for each figure.
pub fn decoupled_label_run(
    name: &str,
    detector: &LabelDetector,
    classifier: &LabelClassifier,
    corpus: &[FigureRecord],
) -> Result<(NamedRun, Vec<Vec<LabeledBox>>)> {
    let labels = corpus
        .iter()
        .map(|r| detect_labels(detector, classifier, &r.image))
        .collect::<Result<Vec<_>>>()?;
    let run = NamedRun {
        name: name.to_string(),
        images: corpus
            .iter()
            .zip(&labels)
            .map(|(r, l)| (r.image_id.clone(), label_predictions(l)))
            .collect(),
    };
    Ok((run, labels))
}

pub fn end_to_end_label_run(name: &str, detector: &LabelDetector, corpus: &[FigureRecord]) -> Result<NamedRun> {
    Ok(NamedRun {
        name: name.to_string(),
        images: corpus
            .iter()
            .map(|r| Ok((r.image_id.clone(), label_predictions(&detector.detect_classes(&r.image)?))))
            .collect::<Result<_>>()?,
    })
}

pub fn subfigure_run(
    name: &str,
    detector: &SubfigureDetector,
    corpus: &[FigureRecord],
    labels: &[Vec<LabeledBox>],
) -> Result<NamedRun> {
    Ok(NamedRun {
        name: name.to_string(),
        images: corpus
            .iter()
            .zip(labels)
            .map(|(r, l)| {
                let res = detector.detect(&r.image_id, &r.image, l)?;
                Ok((r.image_id.clone(), subfigure_predictions(&res)))
            })
            .collect::<Result<_>>()?,
    })
}

/// AP at one threshold for a run, pooled over classes.
pub fn run_ap(run: &NamedRun, gts: &[(String, Vec<GroundTruth>)], iou: f64, opts: ApOptions) -> Result<f64> {
    let by_id: HashMap<&String, &Vec<Prediction>> = run.images.iter().map(|(i, p)| (i, p)).collect();
    let images: Vec<ImageDetections> = gts
        .iter()
        .map(|(id, g)| ImageDetections {
            image_id: id.clone(),
            preds: by_id.get(id).map(|p| (*p).clone()).unwrap_or_default(),
            gts: g.clone(),
        })
        .collect();
    Ok(crate::evaluation::corpus_ap(&images, iou, opts)?.ap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub tables: Vec<AblationTable>,
    /// `(run, metric, value)` summary lines.
    pub summary: Vec<(String, String, f64)>,
}

impl AblationOutcome {
    pub fn value(&self, run: &str, metric: &str) -> Option<f64> {
        self.summary.iter().find(|(r, m, _)| r == run && m == metric).map(|s| s.2)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tables {
            s.push_str(&format!("{t}\n\n"));
        }
        for (run, metric, v) in &self.summary {
            s.push_str(&format!("{run:<14} {metric:<16} {:>6.1}\n", 100.0 * v));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,metric,value\n");
        for (run, metric, v) in &self.summary {
            s.push_str(&format!("{run},{metric},{v:.6}\n"));
        }
        s
    }
}

fn cached_or_train<M>(
    path: &Path,
    force: bool,
    load: impl FnOnce(&Path) -> Result<M>,
    train: impl FnOnce() -> Result<(M, TrainLog)>,
    save: impl FnOnce(&M, &Path) -> Result<()>,
) -> Result<M> {
    if path.is_file() && !force {
        return load(path);
    }
    let (m, log) = train()?;
    save(&m, path)?;
    let mut csv = path.to_path_buf();
    csv.set_extension("loss.csv");
    write_file(&csv, log.to_csv())?;
    Ok(m)
}

/// Trains (or reuses the checkpoints of) both configurations of an
/// ablation on the train corpus, scores them on the test corpus, and
/// writes the comparison under `outputs/ablation-<which>/`.
pub fn ablate(cfg: &PipelineConfig, which: Ablation, force: bool) -> Result<AblationOutcome> {
    cfg.validate()?;
    let alphabet = cfg.corpus.alphabet()?;
    let train = load_split(cfg, &cfg.paths.train_corpus())?;
    let test = load_split(cfg, &cfg.paths.test_corpus())?;
    let detector = || {
        cached_or_train(
            &checkpoint_path(cfg, Stage::LabelDetector.name()),
            force,
            |p| LabelDetector::load(p, &cfg.label_detector),
            || train_label_detector(cfg, &train),
            |m, p| m.save(p),
        )
    };
    let classifier = || {
        cached_or_train(
            &checkpoint_path(cfg, Stage::LabelClassifier.name()),
            force,
            |p| LabelClassifier::load(p, &cfg.label_classifier),
            || train_label_classifier(cfg, &train),
            |m, p| m.save(p),
        )
    };
    let outcome = match which {
        Ablation::Decoupling => {
            let det = detector()?;
            let cls = classifier()?;
            let mut e2e_cfg = cfg.label_detector.clone();
            e2e_cfg.num_classes = alphabet.len();
            let e2e = cached_or_train(
                &checkpoint_path(cfg, "end-to-end"),
                force,
                |p| LabelDetector::load(p, &e2e_cfg),
                || train_end_to_end(cfg, &train),
                |m, p| m.save(p),
            )?;
            decoupling_outcome(cfg, &det, &cls, &e2e, &test)?
        }
        Ablation::Latent => {
            let labels: Vec<Vec<LabeledBox>> = match cfg.evaluation.ablation_labels {
                LabelSource::GroundTruth => test.iter().map(|r| r.gt_labels()).collect(),
                LabelSource::Detected => {
                    let det = detector()?;
                    let cls = classifier()?;
                    test.iter()
                        .map(|r| detect_labels(&det, &cls, &r.image))
                        .collect::<Result<_>>()?
                }
            };
            let mut models = Vec::new();
            for (name, refinement) in [("latent", Refinement::Latent), ("anchor-only", Refinement::AnchorOnly)] {
                let mut sc = cfg.subfigure_detector.clone();
                sc.refinement = refinement;
                let ckpt = if refinement == cfg.subfigure_detector.refinement {
                    checkpoint_path(cfg, Stage::SubfigureDetector.name())
                } else {
                    checkpoint_path(cfg, &format!("subfigure-detector-{name}"))
                };
                let m = cached_or_train(
                    &ckpt,
                    force,
                    |p| SubfigureDetector::load(p, &sc),
                    || train_subfigure_stage(cfg, &train, refinement),
                    |m, p| m.save(p),
                )?;
                models.push((name, m));
            }
            let refs: Vec<(&str, &SubfigureDetector)> = models.iter().map(|(n, m)| (*n, m)).collect();
            latent_outcome(cfg, &refs, &test, &labels)?
        }
    };
    let dir = cfg.paths.outputs.join(format!("ablation-{}", which.name()));
    prepare_output_dir(&dir, true)?;
    write_file(&dir.join(REPORT_TXT), outcome.to_text())?;
    write_file(&dir.join(REPORT_CSV), outcome.to_csv())?;
    for t in &outcome.tables {
        write_file(&dir.join(format!("ap{:02}.csv", (t.iou_threshold * 100.0).round() as u32)), t.to_csv())?;
    }
    write_manifest(
        &dir.join(MANIFEST_FILE),
        &format!("ablate {}", which.name()),
        cfg,
        serde_json::json!({ "test_images": test.len() }),
    )?;
    Ok(outcome)
}

/// Per-class label AP of the decoupled detector + classifier against the
/// jointly trained per-class detector.
pub fn decoupling_outcome(
    cfg: &PipelineConfig,
    detector: &LabelDetector,
    classifier: &LabelClassifier,
    end_to_end: &LabelDetector,
    test: &[FigureRecord],
) -> Result<AblationOutcome> {
    let alphabet = cfg.corpus.alphabet()?;
    let (dec, _) = decoupled_label_run("decoupled", detector, classifier, test)?;
    let e2e = end_to_end_label_run("end-to-end", end_to_end, test)?;
    let gts = gt_runs(test, label_ground_truth);
    let table = ablation_report(&[dec, e2e], &gts, &class_names(&alphabet), 0.5)?;
    let rare = rare_classes(cfg);
    let rare_refs: Vec<&str> = rare.iter().map(String::as_str).collect();
    let mut summary = Vec::new();
    for row in &table.rows {
        summary.push((row.name.clone(), "mean_ap50".to_string(), row.mean));
        if let Some(v) = table.mean_over(row, &rare_refs) {
            summary.push((row.name.clone(), "rare_ap50".to_string(), v));
        }
    }
    Ok(AblationOutcome {
        tables: vec![table],
        summary,
    })
}

/// Subfigure AP with and without latent refinement on the same labels.
pub fn latent_outcome(
    cfg: &PipelineConfig,
    models: &[(&str, &SubfigureDetector)],
    test: &[FigureRecord],
    labels: &[Vec<LabeledBox>],
) -> Result<AblationOutcome> {
    let alphabet = cfg.corpus.alphabet()?;
    let gts = gt_runs(test, subfigure_ground_truth);
    let runs: Vec<NamedRun> = models
        .iter()
        .map(|(name, m)| subfigure_run(name, m, test, labels))
        .collect::<Result<_>>()?;
    let opts = ap_options(cfg);
    let mut summary = Vec::new();
    for run in &runs {
        for (metric, iou) in [("ap50", 0.5), ("ap75", 0.75)] {
            summary.push((run.name.clone(), metric.to_string(), run_ap(run, &gts, iou, opts)?));
        }
    }
    let classes = class_names(&alphabet);
    Ok(AblationOutcome {
        tables: vec![
            ablation_report(&runs, &gts, &classes, 0.5)?,
            ablation_report(&runs, &gts, &classes, 0.75)?,
        ],
        summary,
    })
}
