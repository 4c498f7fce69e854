//! Three models overfit on a single 2x2 figure, then the full separate /
//! evaluate path on disk.

use std::fs;
use std::path::Path;

use figsep::config::{Paths, PipelineConfig};
use figsep::dataset::glyph::GlyphRanges;
use figsep::dataset::{generate_synthetic_figure, load_corpus, save_corpus, FigureRecord, LabelPosition, SyntheticLayoutSpec};
use figsep::geometry::iou;
use figsep::pipeline::{self, Stage};
use figsep::raster::{box_to_pixels, crop};
use figsep::subfigure_detector::DetectionResult;
use image::{Rgb, RgbImage};

fn two_by_two(cfg: &PipelineConfig) -> FigureRecord {
    let alphabet = cfg.corpus.alphabet().unwrap();
    let spec = SyntheticLayoutSpec {
        rows: 2,
        cols: 2,
        jitter: 0.05,
        n_subfigures: 4,
        label_position: LabelPosition::Corner,
        alphabet: alphabet.classes().to_vec(),
        width: cfg.corpus.width,
        height: cfg.corpus.height,
        glyphs: GlyphRanges {
            min_scale: 2.0,
            max_scale: 2.0,
            p_upper: 0.0,
            p_paren: 0.0,
        },
    };
    let mut fig = generate_synthetic_figure(&spec, 5).unwrap();
    fig.image_id = "fig".into();
    fig
}

fn config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::toy();
    cfg.paths = Paths::under(root);
    cfg.schedules.label_detector.steps = 300;
    cfg.schedules.label_detector.batch_size = 2;
    cfg.schedules.label_classifier.steps = 300;
    cfg.schedules.label_classifier.batch_size = 16;
    cfg.schedules.subfigure_detector.steps = 300;
    cfg.schedules.subfigure_detector.batch_size = 2;
    for s in [
        &mut cfg.schedules.label_detector,
        &mut cfg.schedules.label_classifier,
        &mut cfg.schedules.subfigure_detector,
    ] {
        s.decay_every = 250;
    }
    cfg
}

#[test]
fn overfit_figure_separates_into_named_crops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let alphabet = cfg.corpus.alphabet().unwrap();
    let fig = two_by_two(&cfg);
    save_corpus(&[fig.clone()], &cfg.paths.train_corpus(), &alphabet).unwrap();
    save_corpus(&[fig.clone()], &cfg.paths.test_corpus(), &alphabet).unwrap();

    for stage in Stage::ALL {
        let log = pipeline::train_stage(&cfg, stage, false).unwrap();
        let mean = |r: &[figsep::nn::StepRecord]| r.iter().map(|s| s.total).sum::<f64>() / r.len() as f64;
        let (first, last) = (mean(&log.records[..10]), mean(&log.records[log.records.len() - 10..]));
        assert!(last < 0.3 * first, "{}: loss {first:.3} -> {last:.3}", stage.name());
    }
    assert!(matches!(
        pipeline::train_stage(&cfg, Stage::LabelDetector, false),
        Err(figsep::Error::OutputExists(_))
    ));

    let out = dir.path().join("separated");
    let seps = pipeline::separate(&cfg, &cfg.paths.test_corpus(), &out, false).unwrap();
    assert_eq!(seps.len(), 1);
    let result = &seps[0].result;

    // one crop per label, named by its class
    let mut crops: Vec<String> = fs::read_dir(out.join(pipeline::CROPS_DIR))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    crops.sort();
    assert_eq!(crops, ["fig_a.png", "fig_b.png", "fig_c.png", "fig_d.png"]);
    for s in &result.subfigures {
        let gt = fig.subfig_boxes.iter().find(|g| g.class == s.class).unwrap();
        assert!(iou(&s.bbox, &gt.bbox).unwrap() > 0.5, "class {}", s.class);
        // crop pixels are exactly the source region of the predicted box
        let name = pipeline::crop_name("fig", alphabet.glyph(s.class).unwrap());
        let saved = image::open(out.join(pipeline::CROPS_DIR).join(name)).unwrap().to_rgb8();
        let rect = box_to_pixels(&s.bbox, fig.width(), fig.height()).unwrap();
        assert_eq!(saved, crop(&fig.image, &rect));
    }

    // the JSON on disk is what the library returned
    let text = fs::read_to_string(out.join(pipeline::RESULTS_DIR).join("fig.json")).unwrap();
    assert_eq!(&DetectionResult::from_json(&text, &alphabet).unwrap(), result);

    // evaluate over files == report over in-memory results
    let from_disk = pipeline::evaluate(&cfg, &out, &cfg.paths.test_corpus()).unwrap();
    let test = load_corpus(&cfg.paths.test_corpus(), &alphabet).unwrap();
    let direct = pipeline::report_for(&cfg, &test, &seps).unwrap();
    assert_eq!(from_disk, direct);
    assert!(direct.ap50 > 0.99, "{direct}");
    assert_eq!(
        fs::read_to_string(out.join(pipeline::REPORT_CSV)).unwrap(),
        direct.to_csv()
    );

    // a blank page: no labels, no crops, a valid empty result
    let blank_dir = dir.path().join("blank");
    fs::create_dir_all(&blank_dir).unwrap();
    RgbImage::from_pixel(192, 192, Rgb([255, 255, 255]))
        .save(blank_dir.join("blank.png"))
        .unwrap();
    let blank_out = dir.path().join("blank-out");
    let seps = pipeline::separate(&cfg, &blank_dir, &blank_out, false).unwrap();
    assert!(seps[0].labels.is_empty() && seps[0].result.subfigures.is_empty());
    let text = fs::read_to_string(blank_out.join(pipeline::RESULTS_DIR).join("blank.json")).unwrap();
    let parsed = DetectionResult::from_json(&text, &alphabet).unwrap();
    assert_eq!(parsed.image_id, "blank");
    assert!(parsed.subfigures.is_empty());
    assert!(!blank_out.join(pipeline::CROPS_DIR).exists());
}

#[test]
fn separate_requires_all_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let err = pipeline::separate(&cfg, dir.path(), &dir.path().join("out"), false).unwrap_err();
    assert!(matches!(err, figsep::Error::Missing(_)), "{err}");
}
