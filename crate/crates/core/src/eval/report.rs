//! Predictions interchange file and human/machine-readable result tables.
//!
//! The interchange format is JSONL, one record per image:
//!
//! ```text
//! {"image":"images/r0/det_000.png","boxes":[{"class":"gwn","score":0.93,"x":40,"y":38,"w":120,"h":118}]}
//! ```

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ClassificationEval, DetectionEval, SizeRecallCurve, TransferTable,
};
use crate::distort::{DistortionClass, ALL_CLASSES};
use crate::error::{Error, Result};
use crate::image::Rect;
use crate::model::ScoredBox;

/// All detections for one image, keyed by its manifest-relative path.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePredictions {
    pub file: String,
    pub boxes: Vec<ScoredBox>,
}

#[derive(Serialize, Deserialize)]
struct PredRecord {
    image: String,
    boxes: Vec<PredBox>,
}

#[derive(Serialize, Deserialize)]
struct PredBox {
    class: DistortionClass,
    score: f64,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

/// Writes predictions as JSONL in input order.
pub fn write_predictions(path: &Path, predictions: &[ImagePredictions]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for p in predictions {
        let record = PredRecord {
            image: p.file.clone(),
            boxes: p
                .boxes
                .iter()
                .map(|b| PredBox {
                    class: b.class,
                    score: b.score,
                    x: b.rect.x,
                    y: b.rect.y,
                    w: b.rect.w,
                    h: b.rect.h,
                })
                .collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a predictions interchange file.
pub fn read_predictions(path: &Path) -> Result<Vec<ImagePredictions>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let boxes = record
            .boxes
            .iter()
            .map(|b| {
                if !(0.0..=1.0).contains(&b.score) {
                    return Err(Error::Manifest {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message: format!("score {} outside [0, 1]", b.score),
                    });
                }
                Ok(ScoredBox {
                    rect: Rect::new(b.x, b.y, b.w, b.h)?,
                    class: b.class,
                    score: b.score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ImagePredictions {
            file: record.image,
            boxes,
        });
    }
    Ok(out)
}

/// Aligned mAP table: one column per threshold, rows for every scored
/// class and the mean.
pub fn format_map_table(eval: &DetectionEval, label: &str) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<16}", label);
    for t in &eval.thresholds {
        let _ = write!(out, "  mAP@{:<5}", trim_float(t.iou));
    }
    out.push('\n');
    let classes: Vec<DistortionClass> = eval
        .thresholds
        .first()
        .map(|t| t.per_class_ap.keys().copied().collect())
        .unwrap_or_default();
    for class in classes {
        let _ = write!(out, "{:<16}", class.name());
        for t in &eval.thresholds {
            let _ = write!(out, "  {:<9.3}", t.per_class_ap[&class]);
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<16}", "mean");
    for t in &eval.thresholds {
        let _ = write!(out, "  {:<9.3}", t.map);
    }
    out.push('\n');
    if let Some(t) = eval.thresholds.first() {
        if !t.absent_classes.is_empty() {
            let names: Vec<&str> = t.absent_classes.iter().map(|c| c.name()).collect();
            let _ = writeln!(
                out,
                "note: classes without ground truth excluded from the mean: {}",
                names.join(", ")
            );
        }
    }
    out
}

/// mAP results as CSV: `iou,class,ap` with a `mean` row per threshold.
pub fn map_csv(eval: &DetectionEval) -> String {
    let mut out = String::from("iou,class,ap\n");
    for t in &eval.thresholds {
        for (class, ap) in &t.per_class_ap {
            let _ = writeln!(out, "{},{},{}", t.iou, class.name(), ap);
        }
        let _ = writeln!(out, "{},mean,{}", t.iou, t.map);
    }
    out
}

/// Aligned transfer table, rows grouped by test set.
pub fn format_transfer_table(table: &TransferTable) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<24}", "train -> test");
    for t in &table.thresholds {
        let _ = write!(out, "  @{:<7}", trim_float(*t));
    }
    out.push('\n');
    for cell in &table.cells {
        let _ = write!(out, "{:<24}", format!("{} -> {}", cell.train, cell.test));
        for v in &cell.map_per_threshold {
            let _ = write!(out, "  {:<8.3}", v);
        }
        out.push('\n');
    }
    out
}

/// Transfer table as CSV: `train,test,iou,map`.
pub fn transfer_csv(table: &TransferTable) -> String {
    let mut out = String::from("train,test,iou,map\n");
    for cell in &table.cells {
        for (t, v) in table.thresholds.iter().zip(&cell.map_per_threshold) {
            let _ = writeln!(out, "{},{},{},{}", cell.train, cell.test, t, v);
        }
    }
    out
}

/// Accuracy plus confusion matrix as an aligned table.
pub fn format_confusion(eval: &ClassificationEval) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "accuracy: {:.4} over {} images",
        eval.accuracy, eval.total
    );
    let _ = write!(out, "{:<14}", "true\\pred");
    for class in ALL_CLASSES {
        let _ = write!(out, " {:>6}", shorten(class.name()));
    }
    out.push('\n');
    for (row, class) in ALL_CLASSES.iter().enumerate() {
        let _ = write!(out, "{:<14}", class.name());
        for col in 0..ALL_CLASSES.len() {
            let _ = write!(out, " {:>6}", eval.confusion[row][col]);
        }
        out.push('\n');
    }
    out
}

fn shorten(name: &str) -> &str {
    if name.len() > 6 {
        &name[..6]
    } else {
        name
    }
}

/// Accuracy as CSV: a single `accuracy,total` line.
pub fn accuracy_csv(eval: &ClassificationEval) -> String {
    format!("accuracy,total\n{},{}\n", eval.accuracy, eval.total)
}

/// Confusion matrix as CSV: `true,pred,count` (non-zero cells).
pub fn confusion_csv(eval: &ClassificationEval) -> String {
    let mut out = String::from("true,pred,count\n");
    for (row, true_class) in ALL_CLASSES.iter().enumerate() {
        for (col, pred_class) in ALL_CLASSES.iter().enumerate() {
            let n = eval.confusion[row][col];
            if n > 0 {
                let _ = writeln!(out, "{},{},{}", true_class.name(), pred_class.name(), n);
            }
        }
    }
    out
}

/// Size-recall curve as CSV; empty buckets keep an empty recall field.
pub fn size_recall_csv(curve: &SizeRecallCurve) -> String {
    let mut out = String::from("bucket_lo,bucket_hi,gt_count,matched,recall\n");
    for b in &curve.buckets {
        let recall = b.recall().map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.total, b.matched, recall);
    }
    out
}

fn trim_float(v: f64) -> String {
    let s = format!("{v}");
    s
}
