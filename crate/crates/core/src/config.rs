//! Pipeline configuration: one TOML file holding every model, schedule,
//! path and seed, with named presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::glyph::GlyphRanges;
use crate::dataset::{mix_seed, Alphabet, CorpusSpec, ImbalanceProfile, PatchConfig};
use crate::error::{Error, Result};
use crate::evaluation::Interpolation;
use crate::label_classifier::ClassifierConfig;
use crate::label_detector::{AnchorSet, DetectorConfig};
use crate::nn::{BackboneConfig, Schedule};
use crate::subfigure_detector::{AnchorReduction, Refinement, SubfigureConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    /// Holds `train/` and `test/` corpora.
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub outputs: PathBuf,
}

impl Paths {
    pub fn under(root: &Path) -> Self {
        Paths {
            corpus: root.join("corpus"),
            checkpoints: root.join("checkpoints"),
            outputs: root.join("outputs"),
        }
    }

    pub fn train_corpus(&self) -> PathBuf {
        self.corpus.join("train")
    }

    pub fn test_corpus(&self) -> PathBuf {
        self.corpus.join("test")
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn resolved(&self, base: &Path) -> Paths {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Paths {
            corpus: r(&self.corpus),
            checkpoints: r(&self.checkpoints),
            outputs: r(&self.outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub width: u32,
    pub height: u32,
    pub alphabet: Vec<String>,
    /// Relative frequency per class, non-increasing.
    pub profile: Vec<f64>,
    /// Corner / above / below label placement weights.
    pub position_weights: [f64; 3],
    pub jitter: f64,
    pub glyphs: GlyphRanges,
}

impl CorpusConfig {
    pub fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::new(&self.alphabet)
    }

    pub fn spec(&self, count: usize, id_prefix: &str) -> Result<CorpusSpec> {
        Ok(CorpusSpec {
            count,
            id_prefix: id_prefix.to_string(),
            width: self.width,
            height: self.height,
            alphabet: self.alphabet()?,
            profile: ImbalanceProfile::new(self.profile.clone())?,
            position_weights: self.position_weights,
            jitter: self.jitter,
            glyphs: self.glyphs.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierData {
    /// Jittered crops per ground-truth label in the real set.
    pub real_copies: usize,
    /// `real:synthetic` slots per batch.
    pub mix_ratio: (u32, u32),
    pub patches: PatchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub label_detector: Schedule,
    pub label_classifier: Schedule,
    pub subfigure_detector: Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Labels from the trained label detector and classifier.
    Detected,
    /// Ground-truth labels (isolates the subfigure detector).
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub class_aware: bool,
    pub interpolation: Interpolation,
    /// Labels feeding the subfigure detector in the latent ablation.
    pub ablation_labels: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Base seed; every stage derives its own from it.
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusConfig,
    pub label_detector: DetectorConfig,
    pub label_classifier: ClassifierConfig,
    pub classifier_data: ClassifierData,
    pub subfigure_detector: SubfigureConfig,
    pub schedules: Schedules,
    pub evaluation: EvaluationConfig,
}

/// Per-stage seed offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    TrainCorpus = 0,
    TestCorpus = 1,
    LabelDetector = 2,
    LabelClassifier = 3,
    ClassifierPatches = 4,
    SubfigureDetector = 5,
    EndToEnd = 6,
}

impl PipelineConfig {
    pub fn seed_for(&self, stream: SeedStream) -> u64 {
        mix_seed(self.seed, stream as u64)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "default" => Ok(Self::standard()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}` (toy, default, paper)"))),
        }
    }

    /// Desk-scale setup: 192 px figures, small backbones, minutes of CPU.
    pub fn toy() -> Self {
        let px = |w: f64, h: f64| (w / 192.0, h / 192.0);
        let schedule = |steps: usize, batch_size: usize, learning_rate: f64| Schedule {
            steps,
            batch_size,
            learning_rate,
            decay_every: steps * 2 / 3,
            decay_gamma: 0.1,
        };
        PipelineConfig {
            seed: 7,
            paths: Paths::under(Path::new("runs/toy")),
            corpus: CorpusConfig {
                n_train: 300,
                n_test: 100,
                width: 192,
                height: 192,
                alphabet: ('a'..='h').map(String::from).collect(),
                profile: vec![1.0, 1.0, 0.9, 0.9, 0.7, 0.6, 0.1, 0.1],
                position_weights: [1.0, 1.0, 1.0],
                jitter: 0.08,
                glyphs: GlyphRanges::default(),
            },
            label_detector: DetectorConfig {
                input_resolution: 192,
                backbone: BackboneConfig {
                    in_channels: 3,
                    widths: vec![16, 32, 48, 64],
                    extra_convs: 1,
                    neck_width: 48,
                    out_strides: vec![8],
                },
                anchors: AnchorSet {
                    scales: vec![vec![px(10.0, 9.0), px(16.0, 13.0), px(30.0, 15.0)]],
                },
                conf_threshold: 0.5,
                lambda: 1.0,
                nms_iou: 0.45,
                ignore_iou: 0.7,
                num_classes: 0,
            },
            label_classifier: ClassifierConfig {
                input_size: 32,
                num_classes: 9,
                backbone: BackboneConfig {
                    in_channels: 3,
                    widths: vec![16, 32, 64, 96],
                    extra_convs: 1,
                    neck_width: 96,
                    out_strides: vec![16],
                },
                padding: 0.15,
            },
            classifier_data: ClassifierData {
                real_copies: 2,
                mix_ratio: (1, 1),
                patches: PatchConfig::default(),
            },
            subfigure_detector: SubfigureConfig {
                input_resolution: 192,
                backbone: BackboneConfig {
                    in_channels: 4,
                    widths: vec![16, 32, 48, 64],
                    extra_convs: 1,
                    neck_width: 48,
                    out_strides: vec![16],
                },
                prior: (0.4, 0.4),
                lambda: 1.0,
                // neighbours of the latent cell decode boxes that already
                // match the panel at IoU 0.5; don't train them as negatives
                ignore_iou: 0.5,
                final_conf: 0.25,
                refinement: Refinement::Latent,
                anchor_reduction: AnchorReduction::CenterCell,
                shared_head: true,
                label_jitter: 0.1,
            },
            schedules: Schedules {
                label_detector: schedule(2400, 4, 2e-3),
                label_classifier: schedule(4800, 32, 3e-3),
                subfigure_detector: schedule(1200, 4, 2e-3),
            },
            evaluation: EvaluationConfig {
                class_aware: true,
                interpolation: Interpolation::AllPoint,
                ablation_labels: LabelSource::Detected,
            },
        }
    }

    /// Full-size geometry: 416 px input, three label scales, stride-32
    /// subfigure grid. Needs hours of CPU to train.
    pub fn standard() -> Self {
        let px = |w: f64, h: f64| (w / 416.0, h / 416.0);
        let schedule = |steps: usize, batch_size: usize, learning_rate: f64| Schedule {
            steps,
            batch_size,
            learning_rate,
            decay_every: 10_000,
            decay_gamma: 0.1,
        };
        let mut c = Self::toy();
        c.paths = Paths::under(Path::new("runs/default"));
        c.corpus.n_train = 2000;
        c.corpus.n_test = 500;
        c.corpus.width = 416;
        c.corpus.height = 416;
        c.corpus.alphabet = ('a'..='i').map(String::from).collect();
        c.corpus.profile = vec![1.0, 1.0, 0.9, 0.8, 0.6, 0.45, 0.3, 0.15, 0.1];
        c.label_detector = DetectorConfig {
            input_resolution: 416,
            backbone: BackboneConfig {
                in_channels: 3,
                widths: vec![32, 64, 128, 256, 512],
                extra_convs: 2,
                neck_width: 128,
                out_strides: vec![32, 16, 8],
            },
            anchors: AnchorSet {
                scales: vec![
                    vec![px(48.0, 32.0), px(64.0, 48.0), px(96.0, 64.0)],
                    vec![px(24.0, 20.0), px(32.0, 24.0), px(40.0, 32.0)],
                    vec![px(10.0, 10.0), px(14.0, 12.0), px(20.0, 16.0)],
                ],
            },
            ..c.label_detector
        };
        c.label_classifier = ClassifierConfig {
            input_size: 64,
            num_classes: 10,
            backbone: BackboneConfig {
                in_channels: 3,
                widths: vec![32, 64, 128, 256],
                extra_convs: 1,
                neck_width: 128,
                out_strides: vec![16],
            },
            padding: 0.15,
        };
        c.classifier_data.patches.size = 64;
        c.subfigure_detector.input_resolution = 416;
        c.subfigure_detector.ignore_iou = 0.7;
        c.subfigure_detector.backbone = BackboneConfig {
            in_channels: 4,
            widths: vec![32, 64, 128, 256, 512],
            extra_convs: 2,
            neck_width: 128,
            out_strides: vec![32],
        };
        c.schedules = Schedules {
            label_detector: schedule(30_000, 8, 1e-3),
            label_classifier: schedule(30_000, 64, 1e-3),
            subfigure_detector: schedule(30_000, 8, 1e-3),
        };
        c
    }

    /// Records the published setup (53-layer detector backbone with pyramid
    /// merge, 152-layer classifier, decay every 10000 iterations). For
    /// reference only; far beyond CPU budgets.
    pub fn paper() -> Self {
        let mut c = Self::standard();
        c.paths = Paths::under(Path::new("runs/paper"));
        // five stride-2 stages of 1 + 9 convolutions plus the neck ≈ 53 layers
        c.label_detector.backbone.widths = vec![64, 128, 256, 512, 1024];
        c.label_detector.backbone.extra_convs = 9;
        c.label_detector.backbone.neck_width = 256;
        c.subfigure_detector.backbone.widths = vec![64, 128, 256, 512, 1024];
        c.subfigure_detector.backbone.extra_convs = 9;
        c.subfigure_detector.backbone.neck_width = 256;
        // four stages of 1 + 37 convolutions = 152 layers
        c.label_classifier.backbone.widths = vec![64, 128, 256, 512];
        c.label_classifier.backbone.extra_convs = 37;
        c.label_classifier.backbone.neck_width = 512;
        c.label_classifier.backbone.out_strides = vec![16];
        c.schedules.label_detector.steps = 50_000;
        c.schedules.label_classifier.steps = 50_000;
        c.schedules.subfigure_detector.steps = 50_000;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let alphabet = self.corpus.alphabet()?;
        self.corpus.spec(0, "x")?.panel_count_distribution()?;
        self.label_detector.validate()?;
        self.label_classifier.validate()?;
        self.subfigure_detector.validate()?;
        if self.label_detector.num_classes != 0 {
            return Err(Error::invalid("the label detector is class-agnostic; set num_classes = 0"));
        }
        if self.label_classifier.num_classes != alphabet.num_outputs() {
            return Err(Error::invalid(format!(
                "classifier has {} outputs but the alphabet needs {} (classes + background)",
                self.label_classifier.num_classes,
                alphabet.num_outputs()
            )));
        }
        if self.classifier_data.patches.size != self.label_classifier.input_size {
            return Err(Error::invalid("classifier patch size differs from the classifier input size"));
        }
        for (name, s) in [
            ("label_detector", &self.schedules.label_detector),
            ("label_classifier", &self.schedules.label_classifier),
            ("subfigure_detector", &self.schedules.subfigure_detector),
        ] {
            if s.batch_size == 0 || !(s.learning_rate > 0.0) {
                return Err(Error::invalid(format!("schedule `{name}` needs a batch size and a positive learning rate")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.paths = c.paths.resolved(base);
        Ok(c)
    }
}
