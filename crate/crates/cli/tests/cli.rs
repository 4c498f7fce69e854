use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use figsep::config::{Paths, PipelineConfig};
use figsep::pipeline::{self, Stage};

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::toy();
    cfg.paths = Paths::under(Path::new("run"));
    cfg.corpus.n_train = 10;
    cfg.corpus.n_test = 3;
    for s in [
        &mut cfg.schedules.label_detector,
        &mut cfg.schedules.label_classifier,
        &mut cfg.schedules.subfigure_detector,
    ] {
        s.steps = 8;
        s.decay_every = 6;
    }
    cfg
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> PathBuf {
    let path = dir.join("figsep.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn figsep(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_figsep"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap(), text)
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, text) = figsep(dir, args);
    assert_eq!(code, 0, "figsep {args:?}: {text}");
    text
}

fn cat<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<&'a str> {
    [a, b].concat()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn cli_matches_library_calls_byte_for_byte() {
    let cli_dir = tempfile::tempdir().unwrap();
    let lib_dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    write_config(cli_dir.path(), &cfg);
    let lib_cfg = PipelineConfig::load(&write_config(lib_dir.path(), &cfg)).unwrap();

    let c = &["--config", "figsep.toml", "--jobs", "1"];
    let args = |extra: &[&'static str]| cat(c, extra);
    ok(cli_dir.path(), &args(&["generate"]));
    for stage in ["label-detector", "label-classifier", "subfigure-detector"] {
        ok(cli_dir.path(), &args(&["train", stage]));
    }
    ok(cli_dir.path(), &args(&["separate", "--input", "run/corpus/test", "--out", "sep"]));
    let printed = ok(cli_dir.path(), &args(&["evaluate", "--results", "sep"]));

    pipeline::generate(&lib_cfg, false).unwrap();
    for stage in Stage::ALL {
        pipeline::train_stage(&lib_cfg, stage, false).unwrap();
    }
    let lib_out = lib_dir.path().join("sep");
    let seps = pipeline::separate(&lib_cfg, &lib_cfg.paths.test_corpus(), &lib_out, false).unwrap();
    let report = pipeline::evaluate(&lib_cfg, &lib_out, &lib_cfg.paths.test_corpus()).unwrap();
    assert!(printed.contains(&report.to_string()));

    let (a, b) = (cli_dir.path(), lib_dir.path());
    let mut compared = 0;
    for rel in [
        "run/corpus/train/annotations.jsonl",
        "run/corpus/test/annotations.jsonl",
        "run/checkpoints/label-detector.ckpt",
        "run/checkpoints/label-detector.loss.csv",
        "run/checkpoints/label-classifier.ckpt",
        "run/checkpoints/label-classifier.loss.csv",
        "run/checkpoints/subfigure-detector.ckpt",
        "run/checkpoints/subfigure-detector.loss.csv",
        "sep/report.txt",
        "sep/report.csv",
    ] {
        assert_eq!(read(a.join(rel)), read(b.join(rel)), "{rel}");
        compared += 1;
    }
    for s in &seps {
        for sub in [pipeline::RESULTS_DIR, pipeline::LABELS_DIR] {
            let rel = Path::new("sep").join(sub).join(format!("{}.json", s.result.image_id));
            assert_eq!(read(a.join(&rel)), read(b.join(&rel)), "{}", rel.display());
            compared += 1;
        }
    }
    assert_eq!(compared, 10 + 2 * seps.len());

    // a second forced run reproduces the first
    let before = read(a.join("run/checkpoints/subfigure-detector.loss.csv"));
    ok(a, &args(&["--force", "generate"]));
    ok(a, &args(&["--force", "train", "subfigure-detector"]));
    assert_eq!(read(a.join("run/checkpoints/subfigure-detector.loss.csv")), before);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = tiny_config();
    write_config(d, &cfg);
    let c = ["--config", "figsep.toml"];
    let with = |extra: &[&'static str]| cat(&c, extra);

    // usage
    assert_eq!(figsep(d, &["frobnicate"]).0, 1);
    assert_eq!(figsep(d, &with(&["train", "everything"])).0, 1);
    assert_eq!(figsep(d, &with(&["--jobs", "0", "generate"])).0, 1);
    assert_eq!(figsep(d, &["--config", "missing.toml", "generate"]).0, 2);
    fs::write(d.join("broken.toml"), "seed = [").unwrap();
    assert_eq!(figsep(d, &["--config", "broken.toml", "generate"]).0, 1);
    assert_eq!(figsep(d, &["--help"]).0, 0);

    // data: stages out of order
    let (code, text) = figsep(d, &with(&["train", "label-detector"]));
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("generate"), "{text}");
    assert_eq!(figsep(d, &with(&["separate", "--input", "x", "--out", "y"])).0, 2);

    ok(d, &with(&["generate"]));
    let (code, text) = figsep(d, &with(&["generate"]));
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("--force"), "{text}");

    // results for an image the corpus does not have
    fs::create_dir_all(d.join("res/results")).unwrap();
    fs::write(
        d.join("res/results/stranger.json"),
        r#"{"image_id": "stranger", "subfigures": []}"#,
    )
    .unwrap();
    let (code, text) = figsep(d, &with(&["evaluate", "--results", "res"]));
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("stranger"), "{text}");

    // divergence
    cfg.schedules.subfigure_detector.learning_rate = 1e30;
    write_config(d, &cfg);
    let (code, text) = figsep(d, &with(&["train", "subfigure-detector"]));
    assert_eq!(code, 3, "{text}");
}

#[test]
fn config_presets_print_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["toy", "default", "paper"] {
        let text = ok(dir.path(), &["config", preset]);
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), PipelineConfig::preset(preset).unwrap());
    }
    assert_eq!(figsep(dir.path(), &["config", "huge"]).0, 1);
}
