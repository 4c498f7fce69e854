//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The benchmark criteria (5-7) train the toy preset from scratch, which
//! takes several minutes on one core. Run with
//! `cargo test -p figsep --test acceptance`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use figsep::config::{Paths, PipelineConfig};
use figsep::dataset::{generate_corpus, mix_seed, FigureRecord, ImbalanceProfile, LabeledBox};
use figsep::evaluation::{
    average_precision, corpus_ap, match_detections, ApOptions, GroundTruth, ImageDetections, Interpolation, LabelPr,
    Prediction,
};
use figsep::geometry::{iou, rasterize_mask, BBox, Grid, GridCoord};
use figsep::label_classifier::cross_entropy;
use figsep::label_detector::decode::{decode_box, encode_box, PredictionMap};
use figsep::label_detector::loss::{localization_loss, LossConfig, BOX_FIELDS};
use figsep::label_detector::{cull, RawDetection};
use figsep::nn::BackboneConfig;
use figsep::pipeline::{self, Models, Separation, Stage};
use figsep::subfigure_detector::{
    decode_subfigure, encode_subfigure, subfigure_loss, AnchorReduction, Refinement, SubfigureConfig,
    SubfigureDetector,
};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn report(id: usize, pass: bool, detail: impl Into<String>) -> Outcome {
    let o = Outcome {
        id,
        pass,
        detail: detail.into(),
    };
    println!("criterion {}: {} — {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_box(r: &mut ChaCha8Rng, min: f64, max: f64) -> BBox {
    let w = r.gen_range(min..max);
    let h = r.gen_range(min..max);
    BBox::new(r.gen_range(w / 2.0..1.0 - w / 2.0), r.gen_range(h / 2.0..1.0 - h / 2.0), w, h).unwrap()
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let pr = LabelPr::from_counts(4777, 24, 4982).unwrap();
    // integer oracle for the 4-d.p. values: round(10^4 · a / b)
    let round4 = |a: u64, b: u64| (20_000 * a + b) / (2 * b);
    let p4 = (pr.precision * 1e4).round() as u64;
    let r4 = (pr.recall * 1e4).round() as u64;
    // the reported figures are 99.5% / 95.9%, i.e. three decimals
    let p3 = (pr.precision * 1e3).round() as u64;
    let r3 = (pr.recall * 1e3).round() as u64;
    let pass = p4 == round4(4777, 4801) && r4 == round4(4777, 4982) && p3 == 995 && r3 == 959 && pr.fn_ == 205;
    report(
        1,
        pass && t.elapsed().as_secs_f64() < 1.0,
        format!(
            "label P/R from 4777 TP / 24 FP / 4982 GT = {:.4} / {:.4} (reported 0.995 / 0.959)",
            pr.precision, pr.recall
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Pixel centers of an `n`-pixel axis inside `[lo, hi)`.
fn raster_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let inside = |k: usize| {
        let c = (k as f64 + 0.5) / n as f64;
        lo <= c && c < hi
    };
    let first = (0..n).find(|&k| inside(k));
    match first {
        None => (0, 0),
        Some(a) => {
            let mut b = a;
            while b < n && inside(b) {
                b += 1;
            }
            (a, b)
        }
    }
}

fn raster_iou(a: &BBox, b: &BBox, n: usize) -> f64 {
    let count = |x: (usize, usize), y: (usize, usize)| (x.1 - x.0) * (y.1 - y.0);
    let overlap = |p: (usize, usize), q: (usize, usize)| (p.0.max(q.0), p.1.min(q.1).max(p.0.max(q.0)));
    let (ax, ay) = (raster_span(a.x0(), a.x1(), n), raster_span(a.y0(), a.y1(), n));
    let (bx, by) = (raster_span(b.x0(), b.x1(), n), raster_span(b.y0(), b.y1(), n));
    let inter = count(overlap(ax, bx), overlap(ay, by));
    let union = count(ax, ay) + count(bx, by) - inter;
    inter as f64 / union as f64
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let a = random_box(&mut r, 0.1, 0.9);
        // a third of the pairs are heavily overlapping
        let b = if k % 3 == 0 {
            let (cx, cy) = a.center();
            let w = (a.w * r.gen_range(0.7..1.3)).min(0.9);
            let h = (a.h * r.gen_range(0.7..1.3)).min(0.9);
            // keep it inside the image, where the raster lives
            BBox::new(
                (cx + r.gen_range(-0.05..0.05)).clamp(w / 2.0, 1.0 - w / 2.0),
                (cy + r.gen_range(-0.05..0.05)).clamp(h / 2.0, 1.0 - h / 2.0),
                w,
                h,
            )
            .unwrap()
        } else {
            random_box(&mut r, 0.1, 0.9)
        };
        worst = worst.max((iou(&a, &b).unwrap() - raster_iou(&a, &b, 2000)).abs());
    }

    // masks against a brute-force painter
    let mut mismatches = 0;
    for _ in 0..200 {
        let (h, w) = (r.gen_range(16..120), r.gen_range(16..120));
        let boxes: Vec<BBox> = (0..r.gen_range(0..8)).map(|_| random_box(&mut r, 0.02, 0.5)).collect();
        let mut painted = vec![false; h * w];
        for b in &boxes {
            for v in 0..h {
                for u in 0..w {
                    let (cx, cy) = ((u as f64 + 0.5) / w as f64, (v as f64 + 0.5) / h as f64);
                    if b.x0() <= cx && cx < b.x1() && b.y0() <= cy && cy < b.y1() {
                        painted[v * w + u] = true;
                    }
                }
            }
        }
        let mask = rasterize_mask(&boxes, h, w).unwrap();
        let union = painted.iter().filter(|&&p| p).count();
        let same = (0..h).all(|v| (0..w).all(|u| (mask.get(v, u) == 1) == painted[v * w + u]));
        if mask.popcount() != union || !same {
            mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        2,
        worst < 5e-3 && mismatches == 0 && secs < 60.0,
        format!("max |IoU - raster IoU| over 1000 pairs = {worst:.2e} (< 5e-3); mask mismatches {mismatches}/200 ({secs:.1}s)"),
    )
}

// ---------------------------------------------------------------- 3

fn central_difference(values: &mut [f64], k: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let v = values[k];
    values[k] = v + h;
    let plus = f(values);
    values[k] = v - h;
    let minus = f(values);
    values[k] = v;
    (plus - minus) / (2.0 * h)
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut r = rng(3);
    let gts = [
        BBox::new(0.22, 0.35, 0.12, 0.1).unwrap(),
        BBox::new(0.7, 0.7, 0.3, 0.25).unwrap(),
    ];
    let (mut e1, mut e2, mut e3, mut e4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let mut map = PredictionMap::zeros(Grid::new(3, 4, 0), vec![(0.15, 0.1), (0.3, 0.3)], BOX_FIELDS);
        for v in map.values.iter_mut() {
            *v = r.gen_range(-2.0..2.0);
        }
        let loss = |values: &[f64], lambda: f64| {
            let mut m = map.clone();
            m.values = values.to_vec();
            localization_loss(&[m], &gts, &LossConfig { lambda, ignore_iou: 0.7 }).unwrap()
        };
        // box term alone (λ = 0), then the confidence term as the difference
        let g1 = loss(&map.values, 0.0).grads[0].clone();
        let g_full = loss(&map.values, 1.0).grads[0].clone();
        let mut values = map.values.clone();
        for k in 0..values.len() {
            let n1 = central_difference(&mut values, k, &|v| loss(v, 0.0).l1);
            let n2 = central_difference(&mut values, k, &|v| loss(v, 1.0).l2);
            e1 = e1.max(relative_error(g1[k], n1));
            e2 = e2.max(relative_error(g_full[k] - g1[k], n2));
        }
    }
    for _ in 0..20 {
        let mut logits: Vec<f64> = (0..9).map(|_| r.gen_range(-3.0..3.0)).collect();
        let target = r.gen_range(0..9);
        let (_, g) = cross_entropy(&logits, target);
        for k in 0..logits.len() {
            let n = central_difference(&mut logits, k, &|l| cross_entropy(l, target).0);
            e3 = e3.max(relative_error(g[k], n));
        }
    }
    // a separate stage-1 head sees only the auxiliary-centre term
    let cfg = SubfigureConfig {
        shared_head: false,
        ..small_subfigure_config()
    };
    let grid = Grid::new(4, 4, 0);
    for _ in 0..5 {
        let mut main = PredictionMap::zeros(grid, vec![cfg.prior], 5);
        let mut aux = main.clone();
        for v in main.values.iter_mut().chain(aux.values.iter_mut()) {
            *v = r.gen_range(-1.0..1.0);
        }
        let pairs = vec![
            (labeled(1, 0.1, 0.1), BBox::new(0.25, 0.25, 0.4, 0.4).unwrap()),
            (labeled(2, 0.6, 0.55), BBox::new(0.75, 0.75, 0.4, 0.4).unwrap()),
        ];
        let analytic = subfigure_loss(&main, Some(&aux), &pairs, &cfg).unwrap().grad_aux.unwrap();
        let mut values = aux.values.clone();
        for k in 0..values.len() {
            let n = central_difference(&mut values, k, &|v| {
                let mut a = aux.clone();
                a.values = v.to_vec();
                subfigure_loss(&main, Some(&a), &pairs, &cfg).unwrap().l4
            });
            e4 = e4.max(relative_error(analytic[k], n));
        }
    }
    let worst = e1.max(e2).max(e3).max(e4);
    let secs = t.elapsed().as_secs_f64();
    report(
        3,
        worst < 1e-4 && secs < 60.0,
        format!("max relative FD error: L1 {e1:.1e}, L2 {e2:.1e}, L3 {e3:.1e}, L4 {e4:.1e} (< 1e-4)"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let grid = Grid::new(13, 13, 0);
    let mut worst: f64 = 0.0;
    let err = |a: &BBox, b: &BBox| (a.x - b.x).abs().max((a.y - b.y).abs()).max((a.w - b.w).abs()).max((a.h - b.h).abs());
    for _ in 0..10_000 {
        let b = random_box(&mut r, 0.01, 0.9);
        let prior = (r.gen_range(0.05..0.5), r.gen_range(0.05..0.5));
        let cell = grid.cell_of_clamped(b.x, b.y);
        worst = worst.max(err(&decode_box(encode_box(&b, cell, &grid, prior), cell, &grid, prior), &b));
        // subfigure boxes decode from any cell
        let far = GridCoord {
            i: r.gen_range(0..13),
            j: r.gen_range(0..13),
            scale: 0,
        };
        worst = worst.max(err(&decode_subfigure(encode_subfigure(&b, far, &grid, prior), far, &grid, prior), &b));
    }
    report(4, worst < 1e-6, format!("max round-trip error over 10000 boxes = {worst:.1e} (< 1e-6)"))
}

// ---------------------------------------------------------------- 8

fn small_subfigure_config() -> SubfigureConfig {
    SubfigureConfig {
        input_resolution: 32,
        backbone: BackboneConfig {
            in_channels: 4,
            widths: vec![4, 6, 8],
            extra_convs: 0,
            neck_width: 6,
            out_strides: vec![8],
        },
        prior: (0.4, 0.4),
        lambda: 1.0,
        ignore_iou: 0.7,
        final_conf: 0.25,
        refinement: Refinement::Latent,
        anchor_reduction: AnchorReduction::CenterCell,
        shared_head: true,
        label_jitter: 0.0,
    }
}

fn labeled(class: u32, x: f64, y: f64) -> LabeledBox {
    LabeledBox {
        bbox: BBox::new(x, y, 0.08, 0.08).unwrap(),
        class,
        confidence: 1.0,
    }
}

fn noise_image(r: &mut ChaCha8Rng, size: u32) -> RgbImage {
    RgbImage::from_fn(size, size, |_, _| Rgb([r.gen(), r.gen(), r.gen()]))
}

fn criterion_8() -> Outcome {
    let mut r = rng(8);
    let mut failures: Vec<String> = Vec::new();

    // one subfigure per label, and permuting the labels permutes the output
    let (mut bijection, mut permutation) = (0, 0);
    for k in 0..100 {
        let model = SubfigureDetector::new(small_subfigure_config(), k).unwrap();
        let image = noise_image(&mut r, 32);
        let mut classes: Vec<u32> = (1..=8).collect();
        classes.shuffle(&mut r);
        let n = r.gen_range(1..=6);
        let mut labels: Vec<LabeledBox> = classes[..n]
            .iter()
            .map(|&c| labeled(c, r.gen_range(0.05..0.95), r.gen_range(0.05..0.95)))
            .collect();
        labels.push(LabeledBox { class: 0, ..labeled(0, 0.5, 0.5) }); // background is ignored
        let out = model.detect_candidates(&image, &labels).unwrap();
        let want: Vec<u32> = classes[..n].to_vec();
        if out.iter().map(|d| d.label.class).collect::<Vec<_>>() == want {
            bijection += 1;
        }
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut r);
        let by_class: HashMap<u32, BBox> = model
            .detect_candidates(&image, &shuffled)
            .unwrap()
            .into_iter()
            .map(|d| (d.label.class, d.bbox))
            .collect();
        if out.iter().all(|d| by_class.get(&d.label.class) == Some(&d.bbox)) && by_class.len() == n {
            permutation += 1;
        }
    }
    if bijection < 100 {
        failures.push(format!("bijection {bijection}/100"));
    }
    if permutation < 100 {
        failures.push(format!("permutation {permutation}/100"));
    }

    // culling: a larger ε keeps a subset, and only confident boxes
    let mut culling = 0;
    for _ in 0..100 {
        let dets: Vec<RawDetection> = (0..r.gen_range(0..30))
            .map(|_| RawDetection {
                bbox: random_box(&mut r, 0.02, 0.3),
                confidence: r.gen(),
                cell: GridCoord { i: 0, j: 0, scale: 0 },
                anchor_index: 0,
                class_scores: Vec::new(),
            })
            .collect();
        let (a, b) = (r.gen::<f64>(), r.gen::<f64>());
        let (lo, hi) = (a.min(b), a.max(b));
        let kept_lo = cull(&dets, lo);
        let kept_hi = cull(&dets, hi);
        if kept_hi.iter().all(|d| kept_lo.contains(d) && d.confidence > hi) && kept_lo.len() >= kept_hi.len() {
            culling += 1;
        }
    }
    if culling < 100 {
        failures.push(format!("culling {culling}/100"));
    }

    // AP: removing a false positive never lowers AP; a stricter IoU never
    // raises the TP count; AP ignores monotone rescaling of confidences
    let (mut fp_removal, mut tp_count, mut rescale) = (0, 0, 0);
    for _ in 0..100 {
        let gts: Vec<GroundTruth> = (0..r.gen_range(1..6))
            .map(|_| GroundTruth {
                bbox: random_box(&mut r, 0.1, 0.4),
                class: Some(r.gen_range(1..4)),
            })
            .collect();
        let preds: Vec<Prediction> = (0..r.gen_range(1..10))
            .map(|_| {
                let bbox = if r.gen_bool(0.6) {
                    let g = gts.choose(&mut r).unwrap().bbox;
                    BBox::new(
                        (g.x + r.gen_range(-0.05..0.05)).clamp(0.1, 0.9),
                        (g.y + r.gen_range(-0.05..0.05)).clamp(0.1, 0.9),
                        g.w * r.gen_range(0.8..1.2),
                        g.h * r.gen_range(0.8..1.2),
                    )
                    .unwrap()
                } else {
                    random_box(&mut r, 0.1, 0.4)
                };
                Prediction {
                    bbox,
                    confidence: r.gen(),
                    class: Some(r.gen_range(1..4)),
                }
            })
            .collect();
        let image = |preds: Vec<Prediction>| {
            vec![ImageDetections {
                image_id: "x".into(),
                preds,
                gts: gts.clone(),
            }]
        };
        let opts = ApOptions::default();
        let ap = |preds: Vec<Prediction>| corpus_ap(&image(preds), 0.5, opts).unwrap().ap;
        let base = ap(preds.clone());

        let m = match_detections(&preds, &gts, 0.5, true).unwrap();
        let fps: Vec<usize> = (0..preds.len()).filter(|&i| !m.statuses[i].is_tp()).collect();
        let ok = fps.iter().all(|&i| {
            let mut p = preds.clone();
            p.remove(i);
            ap(p) >= base - 1e-12
        });
        fp_removal += ok as usize;

        let counts: Vec<usize> = (1..=19)
            .map(|k| match_detections(&preds, &gts, k as f64 * 0.05, true).unwrap().true_positives())
            .collect();
        tp_count += counts.windows(2).all(|w| w[1] <= w[0]) as usize;

        let squashed: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction {
                confidence: (3.0 * p.confidence).exp() / 7.0 + 0.01,
                ..*p
            })
            .collect();
        rescale += ((ap(squashed) - base).abs() < 1e-12) as usize;
    }
    for (name, n) in [("fp removal", fp_removal), ("tp count", tp_count), ("rescaling", rescale)] {
        if n < 100 {
            failures.push(format!("AP {name} {n}/100"));
        }
    }
    // sanity on the all-point AP itself
    let hand = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2, Interpolation::AllPoint)
        .unwrap()
        .ap;
    if (hand - (0.5 + 0.5 * 2.0 / 3.0)).abs() > 1e-12 {
        failures.push(format!("hand AP {hand}"));
    }
    report(
        8,
        failures.is_empty(),
        if failures.is_empty() {
            "bijection, permutation, culling and AP properties hold on 100 random instances each".to_string()
        } else {
            format!("violations: {}", failures.join(", "))
        },
    )
}

// ---------------------------------------------------------------- 5-7

fn mean_iou(pairs: &[(BBox, BBox)]) -> f64 {
    pairs.iter().map(|(a, b)| iou(a, b).unwrap()).sum::<f64>() / pairs.len().max(1) as f64
}

fn benchmark(root: &Path) -> Vec<Outcome> {
    let mut cfg = PipelineConfig::toy();
    cfg.paths = Paths::under(root);
    let (train, test) = pipeline::generate(&cfg, false).unwrap();
    let mut out = Vec::new();

    let t = Instant::now();
    let (detector, _) = pipeline::train_label_detector(&cfg, &train).unwrap();
    let t_ld = t.elapsed().as_secs_f64();
    let (classifier, _) = pipeline::train_label_classifier(&cfg, &train).unwrap();
    let t_cls = t.elapsed().as_secs_f64() - t_ld;
    let (subfigure, _) = pipeline::train_subfigure_stage(&cfg, &train, Refinement::Latent).unwrap();
    let t_sub = t.elapsed().as_secs_f64() - t_ld - t_cls;
    let models = Models {
        detector,
        classifier,
        subfigure,
    };
    let separations: Vec<Separation> = test
        .iter()
        .map(|r| pipeline::separate_image(&models, &r.image_id, &r.image).unwrap())
        .collect();
    let bench = pipeline::report_for(&cfg, &test, &separations).unwrap();
    let secs = t.elapsed().as_secs_f64();
    println!(
        "  benchmark: {} train / {} test figures; training {t_ld:.0}s + {t_cls:.0}s + {t_sub:.0}s; AP .5/.75/.5:.95 = {:.3}/{:.3}/{:.3}",
        train.len(),
        test.len(),
        bench.ap50,
        bench.ap75,
        bench.ap50_95
    );
    out.push(report(
        5,
        bench.ap50 >= 0.80 && bench.label.precision >= 0.95 && bench.label.recall >= 0.90 && secs <= 1800.0,
        format!(
            "AP50 {:.3} (>= 0.80), label P {:.3} (>= 0.95) R {:.3} (>= 0.90), {secs:.0}s (<= 1800s)",
            bench.ap50, bench.label.precision, bench.label.recall
        ),
    ));

    // latent refinement vs anchor-only, same labels, budget and seed
    let (anchor_only, _) = pipeline::train_subfigure_stage(&cfg, &train, Refinement::AnchorOnly).unwrap();
    let labels: Vec<Vec<LabeledBox>> = separations.iter().map(|s| s.labels.clone()).collect();
    let latent = pipeline::latent_outcome(
        &cfg,
        &[("latent", &models.subfigure), ("anchor-only", &anchor_only)],
        &test,
        &labels,
    )
    .unwrap();
    let with = latent.value("latent", "ap75").unwrap();
    let without = latent.value("anchor-only", "ap75").unwrap();
    // the final box should improve on the auxiliary one it was read from
    let mut final_vs_gt = Vec::new();
    let mut aux_vs_gt = Vec::new();
    for r in &test {
        for d in models.subfigure.detect_candidates(&r.image, &r.gt_labels()).unwrap() {
            if let Some(s) = r.subfig_boxes.iter().find(|s| s.class == d.label.class) {
                final_vs_gt.push((d.bbox, s.bbox));
                aux_vs_gt.push((d.aux_box, s.bbox));
            }
        }
    }
    println!(
        "  latent: AP75 {:.3} vs anchor-only {:.3}; mean IoU with GT labels: final {:.3}, auxiliary {:.3}",
        with,
        without,
        mean_iou(&final_vs_gt),
        mean_iou(&aux_vs_gt)
    );
    out.push(report(
        6,
        with - without >= 0.05,
        format!(
            "AP75 latent {:.1} - anchor-only {:.1} = {:+.1} points (>= +5)",
            100.0 * with,
            100.0 * without,
            100.0 * (with - without)
        ),
    ));

    // decoupled labels vs the jointly trained per-class detector; scored on
    // a class-balanced probe set so the rare classes are well sampled
    let (end_to_end, _) = pipeline::train_end_to_end(&cfg, &train).unwrap();
    let mut spec = cfg.corpus.spec(60, "balanced-").unwrap();
    spec.profile = ImbalanceProfile::uniform(cfg.corpus.alphabet.len());
    let balanced: Vec<FigureRecord> = generate_corpus(&spec, mix_seed(cfg.seed, 99)).unwrap();
    let dec = pipeline::decoupling_outcome(&cfg, &models.detector, &models.classifier, &end_to_end, &balanced).unwrap();
    println!("{}", dec.tables[0].to_string().lines().map(|l| format!("  {l}")).collect::<Vec<_>>().join("\n"));
    let rare = pipeline::rare_classes(&cfg);
    let d = dec.value("decoupled", "rare_ap50").unwrap_or(0.0);
    let e = dec.value("end-to-end", "rare_ap50").unwrap_or(0.0);
    out.push(report(
        7,
        d - e >= 0.10,
        format!(
            "rare-class ({}) AP50 decoupled {:.1} - end-to-end {:.1} = {:+.1} points (>= +10)",
            rare.join(", "),
            100.0 * d,
            100.0 * e,
            100.0 * (d - e)
        ),
    ));
    out
}

// ---------------------------------------------------------------- 9

fn tiny_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::toy();
    cfg.paths = Paths::under(root);
    cfg.corpus.n_train = 12;
    cfg.corpus.n_test = 4;
    for s in [
        &mut cfg.schedules.label_detector,
        &mut cfg.schedules.label_classifier,
        &mut cfg.schedules.subfigure_detector,
    ] {
        s.steps = 12;
        s.decay_every = 8;
    }
    cfg
}

fn full_run(root: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg = tiny_config(root);
    pipeline::generate(&cfg, false).unwrap();
    for stage in Stage::ALL {
        pipeline::train_stage(&cfg, stage, false).unwrap();
    }
    let out = root.join("separated");
    pipeline::separate(&cfg, &cfg.paths.test_corpus(), &out, false).unwrap();
    pipeline::evaluate(&cfg, &out, &cfg.paths.test_corpus()).unwrap();
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                // manifests echo the (differing) output paths
                if !rel.ends_with("manifest.json") {
                    files.push((rel, fs::read(&p).unwrap()));
                }
            }
        }
    }
    files.sort();
    files
}

fn criterion_9(root: &Path) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (a, b) = pool.install(|| (full_run(&root.join("run-a")), full_run(&root.join("run-b"))));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let kinds = |ext: &str| a.iter().filter(|(n, _)| n.ends_with(ext)).count();
    let covered = kinds("annotations.jsonl") == 2 && kinds(".loss.csv") == 3 && kinds("report.txt") == 1;
    report(
        9,
        a.len() == b.len() && differing.is_empty() && covered,
        format!(
            "{} files compared (annotations, loss curves, checkpoints, results, reports); {} differ",
            a.len(),
            differing.len() + a.len().abs_diff(b.len())
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags; only a name filter matters here
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut outcomes = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_8()];
    outcomes.push(criterion_9(dir.path()));
    outcomes.extend(benchmark(&dir.path().join("benchmark")));
    outcomes.sort_by_key(|o| o.id);
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("\nsummary:");
    for o in &outcomes {
        println!("  criterion {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" });
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
