//! Detection metrics: greedy matching, AP over IoU thresholds, per-class
//! AP, label precision/recall and ablation tables.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bbox: BBox,
    pub confidence: f64,
    pub class: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchStatus {
    TruePositive { gt: usize },
    FalsePositive,
}

impl MatchStatus {
    pub fn is_tp(&self) -> bool {
        matches!(self, MatchStatus::TruePositive { .. })
    }
}

/// Per-prediction outcome, in prediction input order.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub statuses: Vec<MatchStatus>,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.statuses.iter().filter(|s| s.is_tp()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.statuses.len() - self.true_positives()
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("IoU threshold {t} outside (0, 1]")))
    }
}

/// Indices by descending confidence, ties in input order.
fn confidence_order(conf: impl Iterator<Item = f64>) -> Vec<usize> {
    let conf: Vec<f64> = conf.collect();
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]));
    order
}

/// Greedy matching: predictions in descending confidence each take the
/// unmatched ground truth they overlap most (lowest index on ties, same class
/// when `class_aware`) and are true positives iff that IoU reaches the
/// threshold.
pub fn match_detections(
    preds: &[Prediction],
    gts: &[GroundTruth],
    iou_threshold: f64,
    class_aware: bool,
) -> Result<MatchResult> {
    check_threshold(iou_threshold)?;
    let mut taken = vec![false; gts.len()];
    let mut statuses = vec![MatchStatus::FalsePositive; preds.len()];
    for k in confidence_order(preds.iter().map(|p| p.confidence)) {
        let p = &preds[k];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || (class_aware && gt.class != p.class) {
                continue;
            }
            let v = iou_unchecked(&p.bbox, &gt.bbox);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_threshold {
                taken[g] = true;
                statuses[k] = MatchStatus::TruePositive { gt: g };
            }
        }
    }
    Ok(MatchResult {
        false_negatives: taken.iter().filter(|t| !**t).count(),
        statuses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, …, 1.
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PRCurve {
    /// `(recall, precision)` after each prediction in ranked order.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

impl PRCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for (r, p) in &self.points {
            let _ = writeln!(s, "{r:.6},{p:.6}");
        }
        s
    }
}

/// AP from `(confidence, is_tp)` outcomes pooled over a corpus with `n_gt`
/// ground-truth objects. Ties in confidence keep the pooled order.
pub fn average_precision(outcomes: &[(f64, bool)], n_gt: usize, interpolation: Interpolation) -> Result<PRCurve> {
    if n_gt == 0 {
        return Err(Error::invalid("average precision is undefined without ground truth"));
    }
    let mut points = Vec::with_capacity(outcomes.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for k in confidence_order(outcomes.iter().map(|o| o.0)) {
        if outcomes[k].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // envelope: best precision at this recall or beyond
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let ap = match interpolation {
        Interpolation::AllPoint => {
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (k, &(r, _)) in points.iter().enumerate() {
                area += (r - prev_recall) * envelope[k];
                prev_recall = r;
            }
            area
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let r = t as f64 / 10.0;
                    points
                        .iter()
                        .zip(&envelope)
                        .find(|((rec, _), _)| *rec >= r - 1e-12)
                        .map_or(0.0, |(_, &e)| e)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Ok(PRCurve { points, ap: ap.clamp(0.0, 1.0) })
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageDetections {
    pub image_id: String,
    pub preds: Vec<Prediction>,
    pub gts: Vec<GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApOptions {
    pub class_aware: bool,
    pub interpolation: Interpolation,
}

impl Default for ApOptions {
    fn default() -> Self {
        ApOptions {
            class_aware: true,
            interpolation: Interpolation::AllPoint,
        }
    }
}

/// AP at one threshold, matching per image and ranking over the corpus.
pub fn corpus_ap(images: &[ImageDetections], iou_threshold: f64, opts: ApOptions) -> Result<PRCurve> {
    let mut outcomes = Vec::new();
    let mut n_gt = 0;
    for img in images {
        let m = match_detections(&img.preds, &img.gts, iou_threshold, opts.class_aware)?;
        outcomes.extend(img.preds.iter().zip(&m.statuses).map(|(p, s)| (p.confidence, s.is_tp())));
        n_gt += img.gts.len();
    }
    average_precision(&outcomes, n_gt, opts.interpolation)
}

/// `0.50, 0.55, …, 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Mean AP over `thresholds`.
pub fn ap_range(images: &[ImageDetections], thresholds: &[f64], opts: ApOptions) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::invalid("no IoU thresholds"));
    }
    let mut sum = 0.0;
    for &t in thresholds {
        sum += corpus_ap(images, t, opts)?.ap;
    }
    Ok(sum / thresholds.len() as f64)
}

/// AP of each class in `classes`, restricted to that class's predictions and
/// ground truth; `None` when the class has no ground truth.
pub fn per_class_ap(
    images: &[ImageDetections],
    classes: &[u32],
    iou_threshold: f64,
    interpolation: Interpolation,
) -> Result<Vec<Option<f64>>> {
    classes
        .iter()
        .map(|&c| {
            let only: Vec<ImageDetections> = images
                .iter()
                .map(|img| ImageDetections {
                    image_id: img.image_id.clone(),
                    preds: img.preds.iter().filter(|p| p.class == Some(c)).copied().collect(),
                    gts: img.gts.iter().filter(|g| g.class == Some(c)).copied().collect(),
                })
                .collect();
            if only.iter().all(|i| i.gts.is_empty()) {
                return Ok(None);
            }
            let opts = ApOptions {
                class_aware: true,
                interpolation,
            };
            corpus_ap(&only, iou_threshold, opts).map(|c| Some(c.ap))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPr {
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// No predictions at all; precision is then reported as 1.
    pub no_predictions: bool,
}

impl LabelPr {
    pub fn from_counts(tp: usize, fp: usize, n_gt: usize) -> Result<Self> {
        if tp > n_gt {
            return Err(Error::invalid(format!("{tp} true positives exceed {n_gt} ground-truth objects")));
        }
        let no_predictions = tp + fp == 0;
        Ok(LabelPr {
            precision: if no_predictions { 1.0 } else { tp as f64 / (tp + fp) as f64 },
            recall: if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 },
            tp,
            fp,
            fn_: n_gt - tp,
            no_predictions,
        })
    }
}

/// Class-aware label precision and recall over a corpus.
pub fn label_pr(images: &[ImageDetections], iou_threshold: f64) -> Result<LabelPr> {
    let (mut tp, mut fp, mut n_gt) = (0, 0, 0);
    for img in images {
        let m = match_detections(&img.preds, &img.gts, iou_threshold, true)?;
        tp += m.true_positives();
        fp += m.false_positives();
        n_gt += img.gts.len();
    }
    LabelPr::from_counts(tp, fp, n_gt)
}

/// Subfigure APs and label precision/recall for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub images: usize,
    pub ap50: f64,
    pub ap75: f64,
    pub ap50_95: f64,
    pub label: LabelPr,
}

impl SeparationReport {
    pub fn compute(subfigures: &[ImageDetections], labels: &[ImageDetections], opts: ApOptions) -> Result<Self> {
        Ok(SeparationReport {
            images: subfigures.len(),
            ap50: corpus_ap(subfigures, 0.5, opts)?.ap,
            ap75: corpus_ap(subfigures, 0.75, opts)?.ap,
            ap50_95: ap_range(subfigures, &coco_thresholds(), opts)?,
            label: label_pr(labels, 0.5)?,
        })
    }

    pub fn to_csv(&self) -> String {
        format!(
            "images,ap50,ap75,ap50_95,label_precision,label_recall,label_tp,label_fp,label_fn\n{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
            self.images,
            self.ap50,
            self.ap75,
            self.ap50_95,
            self.label.precision,
            self.label.recall,
            self.label.tp,
            self.label.fp,
            self.label.fn_
        )
    }
}

impl fmt::Display for SeparationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8} {:>10}", "images", "AP@0.5", "AP@0.75", "AP@.5:.95")?;
        writeln!(
            f,
            "{:<10} {:>8.1} {:>8.1} {:>10.1}",
            self.images,
            100.0 * self.ap50,
            100.0 * self.ap75,
            100.0 * self.ap50_95
        )?;
        write!(
            f,
            "labels: precision {:.4} recall {:.4} (tp {}, fp {}, fn {}){}",
            self.label.precision,
            self.label.recall,
            self.label.tp,
            self.label.fp,
            self.label.fn_,
            if self.label.no_predictions { " [no predictions]" } else { "" }
        )
    }
}

/// Detections of one configuration over a corpus, per image id.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedRun {
    pub name: String,
    pub images: Vec<(String, Vec<Prediction>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with ground truth.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub iou_threshold: f64,
    pub class_names: Vec<String>,
    pub rows: Vec<AblationRow>,
}

/// Per-class AP of every run against the same ground truth.
pub fn ablation_report(
    runs: &[NamedRun],
    gts: &[(String, Vec<GroundTruth>)],
    classes: &[(u32, String)],
    iou_threshold: f64,
) -> Result<AblationTable> {
    let ids: Vec<&String> = gts.iter().map(|g| &g.0).collect();
    let ids_set: std::collections::HashSet<&String> = ids.iter().copied().collect();
    if ids_set.len() != ids.len() {
        return Err(Error::invalid("duplicate image ids in the ground truth"));
    }
    let class_ids: Vec<u32> = classes.iter().map(|c| c.0).collect();
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let run_ids: std::collections::HashSet<&String> = run.images.iter().map(|i| &i.0).collect();
        if run_ids != ids_set || run.images.len() != ids.len() {
            return Err(Error::invalid(format!("run `{}` covers a different corpus", run.name)));
        }
        let by_id: std::collections::HashMap<&String, &Vec<Prediction>> = run.images.iter().map(|(i, p)| (i, p)).collect();
        let images: Vec<ImageDetections> = gts
            .iter()
            .map(|(id, g)| ImageDetections {
                image_id: id.clone(),
                preds: by_id[id].clone(),
                gts: g.clone(),
            })
            .collect();
        let per_class = per_class_ap(&images, &class_ids, iou_threshold, Interpolation::AllPoint)?;
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        rows.push(AblationRow {
            name: run.name.clone(),
            mean: present.iter().sum::<f64>() / present.len().max(1) as f64,
            per_class,
        });
    }
    Ok(AblationTable {
        iou_threshold,
        class_names: classes.iter().map(|c| c.1.clone()).collect(),
        rows,
    })
}

impl AblationTable {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Mean AP of `row` over the named classes that have ground truth.
    pub fn mean_over(&self, row: &AblationRow, classes: &[&str]) -> Option<f64> {
        let v: Vec<f64> = self
            .class_names
            .iter()
            .zip(&row.per_class)
            .filter(|(n, _)| classes.contains(&n.as_str()))
            .filter_map(|(_, ap)| *ap)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run");
        for c in &self.class_names {
            let _ = write!(s, ",{c}");
        }
        s.push_str(",mean\n");
        for r in &self.rows {
            s.push_str(&r.name);
            for ap in &r.per_class {
                match ap {
                    Some(v) => {
                        let _ = write!(s, ",{v:.6}");
                    }
                    None => s.push(','),
                }
            }
            let _ = writeln!(s, ",{:.6}", r.mean);
        }
        s
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
        write!(f, "{:<w$}", "run")?;
        for c in &self.class_names {
            write!(f, " {c:>6}")?;
        }
        writeln!(f, " {:>6}", "mean")?;
        for r in &self.rows {
            write!(f, "{:<w$}", r.name)?;
            for ap in &r.per_class {
                match ap {
                    Some(v) => write!(f, " {:>6.1}", 100.0 * v)?,
                    None => write!(f, " {:>6}", "-")?,
                }
            }
            writeln!(f, " {:>6.1}", 100.0 * r.mean)?;
        }
        write!(f, "(AP at IoU {:.2}, in %)", self.iou_threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn pred(bbox: BBox, confidence: f64) -> Prediction {
        Prediction {
            bbox,
            confidence,
            class: None,
        }
    }

    fn gt(bbox: BBox) -> GroundTruth {
        GroundTruth { bbox, class: None }
    }

    fn random_box(rng: &mut ChaCha8Rng) -> BBox {
        b(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4))
    }

    #[test]
    fn perfect_predictions_match_everything() {
        let g = vec![gt(b(0.3, 0.3, 0.2, 0.2)), gt(b(0.7, 0.7, 0.2, 0.2))];
        let p: Vec<Prediction> = g.iter().map(|g| pred(g.bbox, 1.0)).collect();
        let m = match_detections(&p, &g, 0.5, false).unwrap();
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives), (2, 0, 0));
        let img = ImageDetections {
            image_id: "x".into(),
            preds: p,
            gts: g,
        };
        assert_eq!(corpus_ap(&[img.clone()], 0.5, ApOptions::default()).unwrap().ap, 1.0);
        assert_eq!(ap_range(&[img], &coco_thresholds(), ApOptions::default()).unwrap(), 1.0);
    }

    #[test]
    fn threshold_straddle() {
        // IoU 0.6: overlap 0.6 of a unit-area box
        let g = gt(b(0.5, 0.5, 0.2, 0.2));
        let p = pred(b(0.5 + 0.2 * 0.25, 0.5, 0.2, 0.2), 0.9);
        assert!((iou_unchecked(&p.bbox, &g.bbox) - 0.6).abs() < 1e-9);
        assert!(match_detections(&[p], &[g], 0.5, false).unwrap().statuses[0].is_tp());
        assert!(!match_detections(&[p], &[g], 0.75, false).unwrap().statuses[0].is_tp());
        assert!(match_detections(&[p], &[g], 0.0, false).is_err());
        assert!(match_detections(&[p], &[g], 1.5, false).is_err());
    }

    /// Independent greedy oracle: walk predictions in every order, keep the
    /// one that visits confidences descending with input-order ties.
    fn oracle(preds: &[Prediction], gts: &[GroundTruth], t: f64) -> Vec<bool> {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for k in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(k, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let order = perms(preds.len())
            .into_iter()
            .find(|o| {
                o.windows(2).all(|w| {
                    let (a, b) = (&preds[w[0]], &preds[w[1]]);
                    a.confidence > b.confidence || (a.confidence == b.confidence && w[0] < w[1])
                })
            })
            .unwrap();
        let mut used = vec![false; gts.len()];
        let mut tp = vec![false; preds.len()];
        for k in order {
            let cands: Vec<(usize, f64)> = (0..gts.len())
                .filter(|&g| !used[g])
                .map(|g| (g, iou_unchecked(&preds[k].bbox, &gts[g].bbox)))
                .collect();
            let top = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            if let Some(&(g, v)) = cands.iter().find(|c| c.1 == top) {
                if v >= t {
                    used[g] = true;
                    tp[k] = true;
                }
            }
        }
        tp
    }

    #[test]
    fn greedy_matches_oracle_and_counts_add_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let gts: Vec<GroundTruth> = (0..3).map(|_| gt(random_box(&mut rng))).collect();
            let preds: Vec<Prediction> = (0..5)
                .map(|_| {
                    let base = gts[rng.gen_range(0..3)].bbox;
                    let j = b(base.x + rng.gen_range(-0.05..0.05), base.y, base.w, base.h * rng.gen_range(0.8..1.2));
                    // coarse confidences force ties
                    pred(j, (rng.gen_range(0..4) as f64) / 4.0)
                })
                .collect();
            let m = match_detections(&preds, &gts, 0.5, false).unwrap();
            let tp: Vec<bool> = m.statuses.iter().map(|s| s.is_tp()).collect();
            assert_eq!(tp, oracle(&preds, &gts, 0.5));
            assert_eq!(m.true_positives() + m.false_positives(), preds.len());
            assert_eq!(m.true_positives() + m.false_negatives, gts.len());
            // each GT matched at most once
            let mut gs: Vec<usize> = m
                .statuses
                .iter()
                .filter_map(|s| match s {
                    MatchStatus::TruePositive { gt } => Some(*gt),
                    _ => None,
                })
                .collect();
            gs.sort();
            gs.dedup();
            assert_eq!(gs.len(), m.true_positives());
        }
    }

    #[test]
    fn stricter_threshold_can_free_a_gt_for_a_later_prediction() {
        // greedy matching is order-dependent: at 0.5 the confident loose box
        // takes the GT; at 0.75 it cannot, and the tight box behind it can
        let g = gt(b(0.5, 0.5, 0.2, 0.2));
        let loose = pred(b(0.549, 0.5, 0.2, 0.2), 0.9);
        let tight = pred(b(0.51, 0.5, 0.2, 0.2), 0.8);
        let lo = match_detections(&[loose, tight], &[g], 0.5, false).unwrap();
        let hi = match_detections(&[loose, tight], &[g], 0.75, false).unwrap();
        assert_eq!(lo.statuses, vec![MatchStatus::TruePositive { gt: 0 }, MatchStatus::FalsePositive]);
        assert_eq!(hi.statuses, vec![MatchStatus::FalsePositive, MatchStatus::TruePositive { gt: 0 }]);
    }

    #[test]
    fn class_aware_matching_needs_the_same_class() {
        let g = GroundTruth {
            bbox: b(0.5, 0.5, 0.2, 0.2),
            class: Some(1),
        };
        let mut p = pred(g.bbox, 0.9);
        p.class = Some(2);
        assert!(!match_detections(&[p], &[g], 0.5, true).unwrap().statuses[0].is_tp());
        assert!(match_detections(&[p], &[g], 0.5, false).unwrap().statuses[0].is_tp());
    }

    #[test]
    fn hand_computed_curves() {
        // TP, FP, TP with two ground truths: envelope 1 up to recall 0.5,
        // then 2/3
        let c = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2, Interpolation::AllPoint).unwrap();
        assert_eq!(c.points, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
        assert!((c.ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        // eleven-point: recall 0..0.5 → 1 (6 points), 0.6..1 → 2/3 (5 points)
        let c11 = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2, Interpolation::ElevenPoint).unwrap();
        assert!((c11.ap - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
        assert_eq!(average_precision(&[(0.9, false)], 1, Interpolation::AllPoint).unwrap().ap, 0.0);
        assert_eq!(average_precision(&[], 3, Interpolation::AllPoint).unwrap().ap, 0.0);
        assert!(average_precision(&[(0.9, true)], 0, Interpolation::AllPoint).is_err());
        assert!(c.to_csv().starts_with("recall,precision\n0.500000,1.000000"));
    }

    #[test]
    fn constant_iou_steps_through_thresholds() {
        let g = gt(b(0.5, 0.5, 0.2, 0.2));
        // IoU just above 0.6
        let p = pred(b(0.549, 0.5, 0.2, 0.2), 0.9);
        let img = ImageDetections {
            image_id: "a".into(),
            preds: vec![p],
            gts: vec![g],
        };
        let v = ap_range(&[img], &coco_thresholds(), ApOptions::default()).unwrap();
        assert!((v - 0.3).abs() < 1e-12, "{v}");
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!((t[0], t[9]), (0.5, 0.95));
    }

    fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<ImageDetections> {
        (0..4)
            .map(|k| {
                let gts: Vec<GroundTruth> = (0..rng.gen_range(1..4))
                    .map(|_| GroundTruth {
                        bbox: random_box(rng),
                        class: Some(rng.gen_range(1..3)),
                    })
                    .collect();
                let mut preds = Vec::new();
                for g in &gts {
                    if rng.gen_bool(0.8) {
                        preds.push(Prediction {
                            bbox: b(g.bbox.x + rng.gen_range(-0.04..0.04), g.bbox.y, g.bbox.w, g.bbox.h),
                            confidence: rng.gen(),
                            class: if rng.gen_bool(0.9) { g.class } else { Some(3) },
                        });
                    }
                }
                for _ in 0..rng.gen_range(0..3) {
                    preds.push(Prediction {
                        bbox: random_box(rng),
                        confidence: rng.gen(),
                        class: Some(rng.gen_range(1..3)),
                    });
                }
                ImageDetections {
                    image_id: format!("img{k}"),
                    preds,
                    gts,
                }
            })
            .collect()
    }

    #[test]
    fn ap_properties_on_random_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let opts = ApOptions::default();
        for _ in 0..100 {
            let corpus = random_corpus(&mut rng);
            let ap = corpus_ap(&corpus, 0.5, opts).unwrap().ap;
            assert!((0.0..=1.0).contains(&ap));

            // strictly monotone rescoring leaves AP unchanged
            let mut squashed = corpus.clone();
            for img in &mut squashed {
                for p in &mut img.preds {
                    p.confidence = (3.0 * p.confidence).exp() - 7.0;
                }
            }
            assert!((corpus_ap(&squashed, 0.5, opts).unwrap().ap - ap).abs() < 1e-12);

            // dropping a false positive never hurts
            for (i, img) in corpus.iter().enumerate() {
                let m = match_detections(&img.preds, &img.gts, 0.5, true).unwrap();
                if let Some(k) = m.statuses.iter().position(|s| !s.is_tp()) {
                    let mut fewer = corpus.clone();
                    fewer[i].preds.remove(k);
                    assert!(corpus_ap(&fewer, 0.5, opts).unwrap().ap >= ap - 1e-12);
                }
            }

            // a stricter threshold never adds true positives, and never turns a
            // FP into a TP when no two predictions compete for a GT
            for img in &corpus {
                let lo = match_detections(&img.preds, &img.gts, 0.5, true).unwrap();
                let hi = match_detections(&img.preds, &img.gts, 0.75, true).unwrap();
                assert!(hi.true_positives() <= lo.true_positives());
                let contested = img.gts.iter().any(|g| {
                    img.preds.iter().filter(|p| iou_unchecked(&p.bbox, &g.bbox) > 0.0).count() > 1
                });
                if !contested {
                    for (a, b) in lo.statuses.iter().zip(&hi.statuses) {
                        assert!(a.is_tp() || !b.is_tp());
                    }
                }
            }

            // the range is the mean of the individual APs
            let t = coco_thresholds();
            let mean = t.iter().map(|&t| corpus_ap(&corpus, t, opts).unwrap().ap).sum::<f64>() / 10.0;
            assert!((ap_range(&corpus, &t, opts).unwrap() - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn label_precision_recall() {
        let r = LabelPr::from_counts(4777, 24, 4982).unwrap();
        assert_eq!(format!("{:.4} {:.4}", r.precision, r.recall), "0.9950 0.9589");
        assert_eq!(r.fn_, 205);
        let r = LabelPr::from_counts(3, 1, 4).unwrap();
        assert_eq!((r.precision, r.recall), (0.75, 0.75));
        let r = LabelPr::from_counts(0, 0, 5).unwrap();
        assert!(r.no_predictions && r.precision == 1.0 && r.recall == 0.0);

        let g = GroundTruth {
            bbox: b(0.5, 0.5, 0.2, 0.2),
            class: Some(1),
        };
        let img = ImageDetections {
            image_id: "x".into(),
            preds: vec![Prediction {
                bbox: g.bbox,
                confidence: 1.0,
                class: Some(1),
            }],
            gts: vec![g],
        };
        let r = label_pr(&[img], 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
    }

    #[test]
    fn ablation_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corpus = random_corpus(&mut rng);
        let gts: Vec<(String, Vec<GroundTruth>)> = corpus.iter().map(|i| (i.image_id.clone(), i.gts.clone())).collect();
        let run = NamedRun {
            name: "base".into(),
            images: corpus.iter().map(|i| (i.image_id.clone(), i.preds.clone())).collect(),
        };
        let classes = vec![(1, "a".to_string()), (2, "b".to_string()), (5, "e".to_string())];
        let single = ablation_report(&[run.clone()], &gts, &classes, 0.5).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].per_class[2], None);
        let mut twin = run.clone();
        twin.name = "twin".into();
        twin.images.reverse();
        let pair = ablation_report(&[run.clone(), twin], &gts, &classes, 0.5).unwrap();
        assert_eq!(pair.rows[0].per_class, pair.rows[1].per_class);
        assert_eq!(pair.mean_over(&pair.rows[0], &["a", "b"]), Some(pair.rows[0].mean));
        let csv = pair.to_csv();
        assert!(csv.starts_with("run,a,b,e,mean\nbase,"));
        assert_eq!(csv.lines().count(), 3);
        assert!(pair.to_string().contains("twin"));

        let mut short = run;
        short.images.pop();
        assert!(ablation_report(&[short], &gts, &classes, 0.5).is_err());
    }
}
