//! Detection and classification scoring: greedy matching, average
//! precision over the exact precision envelope, mAP at multiple IoU
//! thresholds, confusion matrices, size-bucketed recall, and the 2x2
//! train/test transfer table.

mod report;

pub use report::{
    accuracy_csv, confusion_csv, format_confusion, format_map_table, format_transfer_table,
    map_csv, read_predictions, size_recall_csv, transfer_csv, write_predictions,
    ImagePredictions,
};

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{ManifestRecord, Split, TaskData};
use crate::distort::{DistortionClass, DISTORTION_CLASSES};
use crate::error::{Error, Result};
use crate::image::{RealImage, Rect};
use crate::model::{detect, DetectParams, PatchClassifierModel, ScoredBox};
use crate::region::{RegionAnnotation, Variant};

/// Intersection over union with exact integer area arithmetic.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    a.iou(b)
}

/// Outcome of greedy matching for one image and one class.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// True-positive flag per prediction, in input order.
    pub pred_is_tp: Vec<bool>,
    /// Matched flag per ground-truth region, in input order.
    pub gt_matched: Vec<bool>,
}

/// Greedy matcher: predictions in descending score order (ties by input
/// order) each claim the unmatched ground truth with the highest IoU, if
/// that IoU reaches the threshold; everything else is a false positive.
/// Predictions and ground truths must already be same-image, same-class.
pub fn match_detections(
    preds: &[ScoredBox],
    gts: &[RegionAnnotation],
    iou_thresh: f64,
) -> MatchResult {
    let scored: Vec<(f64, Rect)> = preds.iter().map(|p| (p.score, p.rect)).collect();
    let gt_rects: Vec<Rect> = gts.iter().map(|g| g.rect).collect();
    match_rects(&scored, &gt_rects, iou_thresh)
}

fn match_rects(preds: &[(f64, Rect)], gts: &[Rect], iou_thresh: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].0.partial_cmp(&preds[a].0).unwrap().then(a.cmp(&b)));
    let mut pred_is_tp = vec![false; preds.len()];
    let mut gt_matched = vec![false; gts.len()];
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let overlap = preds[p].1.iou(gt);
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, overlap)) = best {
            if overlap >= iou_thresh {
                gt_matched[g] = true;
                pred_is_tp[p] = true;
            }
        }
    }
    MatchResult {
        pred_is_tp,
        gt_matched,
    }
}

/// One class's detections and ground truths on one image.
#[derive(Debug, Clone, Default)]
pub struct ClassImage {
    /// `(score, rect)` pairs in the predictor's emission order.
    pub preds: Vec<(f64, Rect)>,
    pub gts: Vec<Rect>,
}

/// Average precision for one class over a dataset: greedy per-image
/// matching, a global score-ordered sweep, and the exact area under the
/// precision envelope (all-point interpolation). `None` when the class has
/// no ground truth.
pub fn average_precision(images: &[ClassImage], iou_thresh: f64) -> Option<f64> {
    let total_gt: usize = images.iter().map(|im| im.gts.len()).sum();
    if total_gt == 0 {
        return None;
    }
    // (score, image index, emission index, is_tp) for the global sweep;
    // score ties resolve by input order.
    let mut flat: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (i, image) in images.iter().enumerate() {
        let matched = match_rects(&image.preds, &image.gts, iou_thresh);
        for (j, &(score, _)) in image.preds.iter().enumerate() {
            flat.push((score, i, j, matched.pred_is_tp[j]));
        }
    }
    flat.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(flat.len());
    for &(_, _, _, is_tp) in &flat {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // Exact area under the precision envelope, swept from the right so the
    // running max is the envelope value on each recall segment.
    let mut ap = 0.0;
    let mut envelope = 0.0;
    let mut upper = points.last().map_or(0.0, |p| p.0);
    for &(recall, precision) in points.iter().rev() {
        if recall < upper {
            ap += envelope * (upper - recall);
            upper = recall;
        }
        if precision > envelope {
            envelope = precision;
        }
    }
    ap += envelope * upper;
    Some(ap)
}

/// Predictions and ground truth for one detection image.
#[derive(Debug, Clone, Default)]
pub struct EvalImage {
    pub predictions: Vec<ScoredBox>,
    pub ground_truth: Vec<RegionAnnotation>,
}

/// Per-threshold detection metrics.
#[derive(Debug, Clone)]
pub struct ThresholdEval {
    pub iou: f64,
    pub per_class_ap: BTreeMap<DistortionClass, f64>,
    /// Classes with no ground truth in this split; excluded from the mean.
    pub absent_classes: Vec<DistortionClass>,
    pub map: f64,
}

/// mAP at each requested threshold.
#[derive(Debug, Clone)]
pub struct DetectionEval {
    pub thresholds: Vec<ThresholdEval>,
}

pub const DEFAULT_IOU_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.9];

/// Evaluates detections: per threshold, the unweighted mean of per-class
/// APs over the classes present in the ground truth. Predictions for
/// classes absent from the ground truth are dropped (their AP is
/// undefined); those classes are listed in `absent_classes`.
pub fn evaluate_detection(images: &[EvalImage], thresholds: &[f64]) -> Result<DetectionEval> {
    let total_gt: usize = images.iter().map(|im| im.ground_truth.len()).sum();
    if total_gt == 0 {
        return Err(Error::UndefinedMetric(
            "no ground-truth regions to evaluate against".into(),
        ));
    }
    let mut per_class: BTreeMap<DistortionClass, Vec<ClassImage>> = BTreeMap::new();
    for class in DISTORTION_CLASSES {
        let entries: Vec<ClassImage> = images
            .iter()
            .map(|im| ClassImage {
                preds: im
                    .predictions
                    .iter()
                    .filter(|p| p.class == class)
                    .map(|p| (p.score, p.rect))
                    .collect(),
                gts: im
                    .ground_truth
                    .iter()
                    .filter(|g| g.spec.class == class)
                    .map(|g| g.rect)
                    .collect(),
            })
            .collect();
        per_class.insert(class, entries);
    }

    let mut out = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let mut per_class_ap = BTreeMap::new();
        let mut absent = Vec::new();
        for (&class, entries) in &per_class {
            match average_precision(entries, threshold) {
                Some(ap) => {
                    per_class_ap.insert(class, ap);
                }
                None => absent.push(class),
            }
        }
        let map = per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64;
        out.push(ThresholdEval {
            iou: threshold,
            per_class_ap,
            absent_classes: absent,
            map,
        });
    }
    Ok(DetectionEval { thresholds: out })
}

/// Accuracy plus a 9x9 confusion matrix (rows = true class).
#[derive(Debug, Clone)]
pub struct ClassificationEval {
    pub accuracy: f64,
    pub confusion: [[u64; 9]; 9],
    pub total: usize,
}

/// Scores `(truth, predicted)` pairs.
pub fn classification_accuracy(
    pairs: &[(DistortionClass, DistortionClass)],
) -> Result<ClassificationEval> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric(
            "no classification pairs to score".into(),
        ));
    }
    let mut confusion = [[0u64; 9]; 9];
    let mut correct = 0usize;
    for &(truth, pred) in pairs {
        confusion[truth.code() as usize][pred.code() as usize] += 1;
        correct += (truth == pred) as usize;
    }
    Ok(ClassificationEval {
        accuracy: correct as f64 / pairs.len() as f64,
        confusion,
        total: pairs.len(),
    })
}

/// Default bucket edges on the ground-truth linear size ratio.
pub const DEFAULT_SIZE_BUCKET_EDGES: [f64; 7] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

/// One size bucket of the recall curve.
#[derive(Debug, Clone, Copy)]
pub struct SizeBucket {
    pub lo: f64,
    pub hi: f64,
    pub total: u64,
    pub matched: u64,
}

impl SizeBucket {
    /// `None` for empty buckets (absent, not zero).
    pub fn recall(&self) -> Option<f64> {
        if self.total == 0 {
            None
        } else {
            Some(self.matched as f64 / self.total as f64)
        }
    }
}

/// Recall per ground-truth size bucket at a fixed IoU threshold.
#[derive(Debug, Clone)]
pub struct SizeRecallCurve {
    pub iou: f64,
    pub buckets: Vec<SizeBucket>,
}

/// Buckets ground truths by `sqrt(area) / image_size` between consecutive
/// edges (last bucket closed above) and reports the matched fraction per
/// bucket at the given IoU threshold.
pub fn size_bucketed_recall(
    images: &[EvalImage],
    iou_thresh: f64,
    edges: &[f64],
    image_size: u32,
) -> Result<SizeRecallCurve> {
    if edges.len() < 2 || edges.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Param("bucket edges must be increasing".into()));
    }
    let mut buckets: Vec<SizeBucket> = edges
        .windows(2)
        .map(|pair| SizeBucket {
            lo: pair[0],
            hi: pair[1],
            total: 0,
            matched: 0,
        })
        .collect();
    let n_buckets = buckets.len();
    let find_bucket = |ratio: f64| -> Option<usize> {
        if ratio < edges[0] || ratio > *edges.last().unwrap() {
            return None;
        }
        Some(
            edges[1..]
                .iter()
                .position(|&hi| ratio < hi)
                .unwrap_or(n_buckets - 1),
        )
    };

    for image in images {
        for class in DISTORTION_CLASSES {
            let preds: Vec<(f64, Rect)> = image
                .predictions
                .iter()
                .filter(|p| p.class == class)
                .map(|p| (p.score, p.rect))
                .collect();
            let gts: Vec<Rect> = image
                .ground_truth
                .iter()
                .filter(|g| g.spec.class == class)
                .map(|g| g.rect)
                .collect();
            if gts.is_empty() {
                continue;
            }
            let matched = match_rects(&preds, &gts, iou_thresh);
            for (g, gt) in gts.iter().enumerate() {
                if let Some(b) = find_bucket(gt.size_ratio(image_size)) {
                    buckets[b].total += 1;
                    buckets[b].matched += matched.gt_matched[g] as u64;
                }
            }
        }
    }
    Ok(SizeRecallCurve {
        iou: iou_thresh,
        buckets,
    })
}

/// Runs the detector over every (optionally split-filtered) detection
/// record of a manifest. Results stay in manifest order.
pub fn predict_manifest(
    model: &PatchClassifierModel,
    records: &[ManifestRecord],
    base_dir: &Path,
    params: &DetectParams,
    split: Option<Split>,
) -> Result<Vec<ImagePredictions>> {
    let selected: Vec<&ManifestRecord> = records
        .iter()
        .filter(|r| matches!(r.task, TaskData::Detection { .. }))
        .filter(|r| split.map_or(true, |s| r.split == s))
        .collect();
    selected
        .par_iter()
        .map(|record| {
            let img = crate::io::load_image(&base_dir.join(&record.file))?.to_real();
            let boxes = detect(model, &img, params)?;
            Ok(ImagePredictions {
                file: record.file.clone(),
                boxes,
            })
        })
        .collect()
}

/// Pairs manifest detection records with a prediction set (possibly empty
/// per image) into evaluator input.
pub fn pair_predictions(
    records: &[ManifestRecord],
    predictions: &[ImagePredictions],
    split: Option<Split>,
) -> Result<Vec<EvalImage>> {
    let by_file: std::collections::HashMap<&str, &ImagePredictions> =
        predictions.iter().map(|p| (p.file.as_str(), p)).collect();
    let mut out = Vec::new();
    for record in records {
        if let Some(s) = split {
            if record.split != s {
                continue;
            }
        }
        if let TaskData::Detection { regions, .. } = &record.task {
            let ground_truth = regions
                .iter()
                .map(|r| r.to_annotation())
                .collect::<Result<Vec<_>>>()?;
            out.push(EvalImage {
                predictions: by_file
                    .get(record.file.as_str())
                    .map(|p| p.boxes.clone())
                    .unwrap_or_default(),
                ground_truth,
            });
        }
    }
    Ok(out)
}

/// One train-variant x test-variant cell of the transfer table.
#[derive(Debug, Clone)]
pub struct TransferCell {
    pub train: Variant,
    pub test: Variant,
    pub map_per_threshold: Vec<f64>,
}

/// The 2x2 (x thresholds) transfer table.
#[derive(Debug, Clone)]
pub struct TransferTable {
    pub thresholds: Vec<f64>,
    pub cells: Vec<TransferCell>,
}

impl TransferTable {
    pub fn cell(&self, train: Variant, test: Variant) -> &TransferCell {
        self.cells
            .iter()
            .find(|c| c.train == train && c.test == test)
            .expect("all four cells present")
    }
}

/// Evaluates both models against the test split of both manifests.
/// `models` and `test_sets` are indexed basic-first; rows come out grouped
/// by test set.
pub fn transfer_matrix(
    models: [&PatchClassifierModel; 2],
    test_sets: [(&[ManifestRecord], &Path); 2],
    thresholds: &[f64],
    params: &DetectParams,
) -> Result<TransferTable> {
    let variants = [Variant::Basic, Variant::Difficult];
    let mut cells = Vec::with_capacity(4);
    for (test_idx, &(records, base)) in test_sets.iter().enumerate() {
        for (train_idx, model) in models.iter().enumerate() {
            let preds = predict_manifest(model, records, base, params, Some(Split::Test))?;
            let images = pair_predictions(records, &preds, Some(Split::Test))?;
            let eval = evaluate_detection(&images, thresholds)?;
            cells.push(TransferCell {
                train: variants[train_idx],
                test: variants[test_idx],
                map_per_threshold: eval.thresholds.iter().map(|t| t.map).collect(),
            });
        }
    }
    Ok(TransferTable {
        thresholds: thresholds.to_vec(),
        cells,
    })
}

/// Everything a full evaluation can produce; commands assemble whichever
/// parts they compute.
#[derive(Debug, Clone, Default)]
pub struct EvalResult {
    pub detection: Option<DetectionEval>,
    pub classification: Option<ClassificationEval>,
    pub size_recall: Option<SizeRecallCurve>,
}

/// Runs the 5x5-grid classifier over the (optionally split-filtered)
/// classification records of a manifest and scores the predictions.
pub fn evaluate_classification(
    model: &PatchClassifierModel,
    records: &[ManifestRecord],
    base_dir: &Path,
    split: Option<Split>,
) -> Result<ClassificationEval> {
    let selected: Vec<&ManifestRecord> = records
        .iter()
        .filter(|r| matches!(r.task, TaskData::Classification { .. }))
        .filter(|r| split.map_or(true, |s| r.split == s))
        .collect();
    let pairs: Vec<(DistortionClass, DistortionClass)> = selected
        .par_iter()
        .map(|record| {
            let img: RealImage = crate::io::load_image(&base_dir.join(&record.file))?.to_real();
            let (pred, _) = crate::model::classify_image(model, &img)?;
            let truth = match &record.task {
                TaskData::Classification { class, .. } => *class,
                _ => unreachable!(),
            };
            Ok((truth, pred))
        })
        .collect::<Result<Vec<_>>>()?;
    classification_accuracy(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distort::DistortionSpec;

    fn rect(x: u32, y: u32, w: u32, h: u32) -> Rect {
        Rect::new(x, y, w, h).unwrap()
    }

    fn gwn_box(r: Rect, score: f64) -> ScoredBox {
        ScoredBox {
            rect: r,
            class: DistortionClass::Gwn,
            score,
        }
    }

    fn gwn_ann(r: Rect) -> RegionAnnotation {
        RegionAnnotation {
            rect: r,
            spec: DistortionSpec::new(DistortionClass::Gwn, 0.05).unwrap(),
        }
    }

    #[test]
    fn iou_basic_properties() {
        let a = rect(0, 0, 100, 100);
        let b = rect(50, 0, 100, 100);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &b), iou(&b, &a));
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn single_match_rule() {
        let gt = vec![gwn_ann(rect(0, 0, 50, 50))];
        let preds = vec![
            gwn_box(rect(0, 0, 50, 50), 0.9),
            gwn_box(rect(2, 2, 50, 50), 0.8),
        ];
        let m = match_detections(&preds, &gt, 0.5);
        assert_eq!(m.pred_is_tp, vec![true, false]);
        assert_eq!(m.gt_matched, vec![true]);
        // Exact prediction is a TP at every threshold.
        for t in [0.5, 0.75, 0.9, 1.0] {
            let m = match_detections(&preds[..1], &gt, t);
            assert!(m.pred_is_tp[0]);
        }
    }

    #[test]
    fn ap_hand_case() {
        // Ranks: TP, FP, TP with 2 ground truths -> AP = 1 * 0.5 + 2/3 * 0.5.
        let images = vec![ClassImage {
            preds: vec![
                (0.9, rect(0, 0, 10, 10)),
                (0.8, rect(50, 50, 10, 10)),
                (0.7, rect(100, 100, 10, 10)),
            ],
            gts: vec![rect(0, 0, 10, 10), rect(100, 100, 10, 10)],
        }];
        let ap = average_precision(&images, 0.5).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12, "{ap}");
    }

    #[test]
    fn ap_degenerate_cases() {
        let perfect = vec![ClassImage {
            preds: vec![(0.2, rect(0, 0, 10, 10)), (0.9, rect(30, 30, 5, 5))],
            gts: vec![rect(0, 0, 10, 10), rect(30, 30, 5, 5)],
        }];
        assert_eq!(average_precision(&perfect, 0.9).unwrap(), 1.0);
        let no_preds = vec![ClassImage {
            preds: vec![],
            gts: vec![rect(0, 0, 10, 10)],
        }];
        assert_eq!(average_precision(&no_preds, 0.5).unwrap(), 0.0);
        let no_gt = vec![ClassImage {
            preds: vec![(0.9, rect(0, 0, 10, 10))],
            gts: vec![],
        }];
        assert!(average_precision(&no_gt, 0.5).is_none());
    }

    #[test]
    fn jittered_boxes_separate_thresholds() {
        // IoU exactly 0.8 against every ground truth.
        let images: Vec<EvalImage> = (0..4)
            .map(|_| EvalImage {
                predictions: vec![gwn_box(rect(10, 10, 100, 80), 0.9)],
                ground_truth: vec![gwn_ann(rect(10, 10, 100, 100))],
            })
            .collect();
        let eval = evaluate_detection(&images, &[0.5, 0.75, 0.9]).unwrap();
        assert_eq!(eval.thresholds[0].map, 1.0);
        assert_eq!(eval.thresholds[1].map, 1.0);
        assert_eq!(eval.thresholds[2].map, 0.0);
    }

    #[test]
    fn undefined_map_without_ground_truth() {
        let images = vec![EvalImage::default()];
        assert!(matches!(
            evaluate_detection(&images, &[0.5]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn accuracy_and_confusion() {
        use DistortionClass::*;
        let pairs = vec![
            (Gwn, Gwn),
            (Gwn, SaltPepper),
            (Jpeg, Jpeg),
            (Jpeg, Jpeg),
            (LowPass, GaussianBlur),
        ];
        let eval = classification_accuracy(&pairs).unwrap();
        assert!((eval.accuracy - 3.0 / 5.0).abs() < 1e-12);
        assert_eq!(eval.confusion[Gwn.code() as usize][Gwn.code() as usize], 1);
        assert_eq!(
            eval.confusion[Gwn.code() as usize][SaltPepper.code() as usize],
            1
        );
        // Rows sum to per-class ground-truth counts.
        let row: u64 = eval.confusion[Jpeg.code() as usize].iter().sum();
        assert_eq!(row, 2);
        // Degenerate predictor: everything called GWN.
        let pairs: Vec<_> = [Gwn, Jpeg, LowPass, Gwn].iter().map(|&t| (t, Gwn)).collect();
        let eval = classification_accuracy(&pairs).unwrap();
        assert!((eval.accuracy - 0.5).abs() < 1e-12);
        assert!(classification_accuracy(&[]).is_err());
    }

    #[test]
    fn size_buckets_hand_tally() {
        // Image size 300; ratios 0.15 (45 px) and 0.5 (150 px).
        let small_gt = rect(0, 0, 45, 45);
        let large_gt = rect(100, 100, 150, 150);
        let images = vec![EvalImage {
            predictions: vec![gwn_box(large_gt, 0.9)],
            ground_truth: vec![gwn_ann(small_gt), gwn_ann(large_gt)],
        }];
        let curve = size_bucketed_recall(&images, 0.9, &DEFAULT_SIZE_BUCKET_EDGES, 300).unwrap();
        assert_eq!(curve.buckets.len(), 6);
        // [0.1, 0.2): one ground truth, unmatched.
        assert_eq!(curve.buckets[0].total, 1);
        assert_eq!(curve.buckets[0].recall(), Some(0.0));
        // [0.5, 0.6): one ground truth, matched exactly.
        assert_eq!(curve.buckets[4].total, 1);
        assert_eq!(curve.buckets[4].recall(), Some(1.0));
        // Empty buckets are absent, not zero.
        assert_eq!(curve.buckets[2].recall(), None);
    }

    /// Independent slow AP: naive per-rank precision/recall points, then
    /// for each recall increment the maximum precision at or beyond it,
    /// integrated point by point.
    fn brute_force_ap(images: &[ClassImage], iou_thresh: f64) -> Option<f64> {
        let total_gt: usize = images.iter().map(|im| im.gts.len()).sum();
        if total_gt == 0 {
            return None;
        }
        let mut rows: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (i, image) in images.iter().enumerate() {
            let mut order: Vec<usize> = (0..image.preds.len()).collect();
            order.sort_by(|&a, &b| {
                image.preds[b]
                    .0
                    .partial_cmp(&image.preds[a].0)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut taken = vec![false; image.gts.len()];
            for &p in &order {
                let mut best_g = None;
                let mut best_iou = -1.0;
                for (g, gt) in image.gts.iter().enumerate() {
                    if taken[g] {
                        continue;
                    }
                    let v = image.preds[p].1.iou(gt);
                    if v > best_iou {
                        best_iou = v;
                        best_g = Some(g);
                    }
                }
                let tp = best_g.is_some() && best_iou >= iou_thresh;
                if tp {
                    taken[best_g.unwrap()] = true;
                }
                rows.push((image.preds[p].0, i, p, tp));
            }
        }
        rows.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0usize, 0usize);
        for &(_, _, _, is_tp) in &rows {
            if is_tp {
                tp += 1
            } else {
                fp += 1
            }
            points.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for i in 0..points.len() {
            let (r, _) = points[i];
            if r > prev_recall {
                let env = points[i..].iter().map(|&(_, p)| p).fold(0.0f64, f64::max);
                ap += (r - prev_recall) * env;
                prev_recall = r;
            }
        }
        Some(ap)
    }

    #[test]
    fn fast_ap_equals_brute_force_on_random_instances() {
        use rand::Rng;
        let mut rng = crate::rng::RngStream::new(31, 0).rng();
        for _ in 0..60 {
            let n_images = rng.random_range(1..=6);
            let images: Vec<ClassImage> = (0..n_images)
                .map(|_| {
                    let n_preds = rng.random_range(0..=5);
                    let n_gts = rng.random_range(0..=4);
                    let mut preds = Vec::new();
                    for _ in 0..n_preds {
                        // Coarse scores force tie handling.
                        let s = rng.random_range(0..5) as f64 / 4.0;
                        let x = rng.random_range(0..80u32);
                        let y = rng.random_range(0..80u32);
                        let w = rng.random_range(8..40u32);
                        let h = rng.random_range(8..40u32);
                        preds.push((s, rect(x, y, w, h)));
                    }
                    let mut gts = Vec::new();
                    for _ in 0..n_gts {
                        let x = rng.random_range(0..80u32);
                        let y = rng.random_range(0..80u32);
                        let w = rng.random_range(8..40u32);
                        let h = rng.random_range(8..40u32);
                        gts.push(rect(x, y, w, h));
                    }
                    ClassImage { preds, gts }
                })
                .collect();
            for threshold in [0.3, 0.5, 0.75] {
                let fast = average_precision(&images, threshold);
                let slow = brute_force_ap(&images, threshold);
                match (fast, slow) {
                    (None, None) => {}
                    (Some(a), Some(b)) => {
                        assert!((a - b).abs() < 1e-9, "{a} vs {b}")
                    }
                    other => panic!("disagreement: {other:?}"),
                }
            }
        }
    }

    /// Exhaustive optimal assignment for tiny instances.
    fn optimal_match_count(preds: &[(f64, Rect)], gts: &[Rect], thresh: f64) -> usize {
        fn recurse(
            p: usize,
            preds: &[(f64, Rect)],
            gts: &[Rect],
            taken: &mut Vec<bool>,
            thresh: f64,
        ) -> usize {
            if p == preds.len() {
                return 0;
            }
            let skip = recurse(p + 1, preds, gts, taken, thresh);
            let mut best = skip;
            for g in 0..gts.len() {
                if !taken[g] && preds[p].1.iou(&gts[g]) >= thresh {
                    taken[g] = true;
                    best = best.max(1 + recurse(p + 1, preds, gts, taken, thresh));
                    taken[g] = false;
                }
            }
            best
        }
        recurse(0, preds, gts, &mut vec![false; gts.len()], thresh)
    }

    #[test]
    fn greedy_matching_vs_optimal_assignment() {
        use rand::Rng;
        let mut rng = crate::rng::RngStream::new(77, 0).rng();
        for _ in 0..200 {
            let n_preds = rng.random_range(0..=4);
            let n_gts = rng.random_range(0..=4);
            let mut random_rect = || {
                let x = rng.random_range(0..40u32);
                let y = rng.random_range(0..40u32);
                rect(x, y, rng.random_range(5..30u32), rng.random_range(5..30u32))
            };
            let preds: Vec<(f64, Rect)> = (0..n_preds)
                .map(|i| (1.0 - i as f64 * 0.1, random_rect()))
                .collect();
            let gts: Vec<Rect> = (0..n_gts).map(|_| random_rect()).collect();
            let threshold = 0.3;
            let greedy = match_rects(&preds, &gts, threshold)
                .pred_is_tp
                .iter()
                .filter(|&&t| t)
                .count();
            let optimal = optimal_match_count(&preds, &gts, threshold);
            assert!(greedy <= optimal);
            // When every feasible pair can be realized simultaneously,
            // greedy finds them all.
            let feasible: usize = preds
                .iter()
                .map(|(_, p)| gts.iter().filter(|g| p.iou(g) >= threshold).count())
                .sum();
            if optimal == feasible {
                assert_eq!(greedy, optimal);
            }
        }
    }
}
