//! JSONL manifests: one record per dataset image, plus schema validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distort::{DistortionClass, DistortionSpec};
use crate::error::{Error, Result};
use crate::image::Rect;
use crate::region::{RegionAnnotation, Variant};

/// Dataset split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// What gets shuffled into splits: whole reference images (prevents
/// near-duplicate leakage) or individual dataset images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Reference,
    Image,
}

/// Split fractions plus the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub unit: SplitUnit,
    pub seed: u64,
}

impl SplitSpec {
    /// 60/20/20 by reference.
    pub fn classification(seed: u64) -> SplitSpec {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            unit: SplitUnit::Reference,
            seed,
        }
    }

    /// 80/0/20 by reference.
    pub fn detection(seed: u64) -> SplitSpec {
        SplitSpec {
            train: 0.8,
            val: 0.0,
            test: 0.2,
            unit: SplitUnit::Reference,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.val + self.test;
        if self.train < 0.0 || self.val < 0.0 || self.test < 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Param(format!(
                "split fractions {}/{}/{} do not sum to 1",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }

    /// Assigns a split to each of `n` keys: a seeded shuffle of the key
    /// indices cut at `round(train * n)` and `round((train + val) * n)`.
    pub fn assign(&self, n: usize) -> Result<Vec<Split>> {
        self.validate()?;
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = crate::rng::RngStream::new(self.seed, STREAM_SPLIT).rng();
        order.shuffle(&mut rng);
        let c1 = (self.train * n as f64).round() as usize;
        let c2 = ((self.train + self.val) * n as f64).round() as usize;
        let mut out = vec![Split::Test; n];
        for (pos, &key) in order.iter().enumerate() {
            out[key] = if pos < c1 {
                Split::Train
            } else if pos < c2 {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(out)
    }
}

// Stream ids reserved per pipeline stage so distinct stages never share a
// random sequence even under the same master seed.
pub(crate) const STREAM_CLASSIFICATION: u64 = 1;
pub(crate) const STREAM_DETECTION: u64 = 2;
pub(crate) const STREAM_SPLIT: u64 = 3;

/// One annotated region as stored in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub class: DistortionClass,
    pub param: f64,
}

impl RegionRecord {
    pub fn from_annotation(ann: &RegionAnnotation) -> RegionRecord {
        RegionRecord {
            x: ann.rect.x,
            y: ann.rect.y,
            w: ann.rect.w,
            h: ann.rect.h,
            class: ann.spec.class,
            param: ann.spec.param,
        }
    }

    pub fn to_annotation(&self) -> Result<RegionAnnotation> {
        Ok(RegionAnnotation {
            rect: Rect::new(self.x, self.y, self.w, self.h)?,
            spec: DistortionSpec::new(self.class, self.param)?,
        })
    }

    pub fn rect(&self) -> Result<Rect> {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

/// Task-specific part of a manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskData {
    /// One global distortion over the whole image.
    Classification {
        class: DistortionClass,
        param: f64,
        level_index: u8,
    },
    /// One or more locally distorted regions.
    Detection {
        variant: Variant,
        regions: Vec<RegionRecord>,
    },
}

/// One dataset item: where the image lives, which reference produced it,
/// its split, and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub ref_id: String,
    pub split: Split,
    #[serde(flatten)]
    pub task: TaskData,
}

/// Writes records as JSON lines.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSONL manifest with a strict schema; malformed lines report
/// their line number. Blank lines are allowed and skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// One validator finding, anchored to a manifest line.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyIssue {
    pub line: usize,
    pub message: String,
}

/// Machine-readable validation report for a manifest.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub manifest: String,
    pub records: usize,
    pub split_counts: BTreeMap<String, usize>,
    pub errors: Vec<VerifyIssue>,
    pub warnings: Vec<VerifyIssue>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }

    /// Plain-text rendering, one line per finding.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "manifest: {}", self.manifest);
        let _ = writeln!(out, "records: {}", self.records);
        for (split, n) in &self.split_counts {
            let _ = writeln!(out, "split {split}: {n}");
        }
        for issue in &self.errors {
            let _ = writeln!(out, "error line {}: {}", issue.line, issue.message);
        }
        for issue in &self.warnings {
            let _ = writeln!(out, "warning line {}: {}", issue.line, issue.message);
        }
        let _ = writeln!(out, "status: {}", if self.ok() { "ok" } else { "failed" });
        out
    }
}

/// Validates a manifest: parseability, file existence, rect bounds against
/// the actual image dimensions, class codes, parameter ranges, and split
/// histogram.
pub fn verify_manifest(path: &Path) -> Result<VerifyReport> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut report = VerifyReport {
        manifest: path.display().to_string(),
        records: 0,
        split_counts: BTreeMap::new(),
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(VerifyIssue {
                    line: line_no,
                    message: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        report.records += 1;
        *report
            .split_counts
            .entry(record.split.to_string())
            .or_insert(0) += 1;

        let image_path = base.join(&record.file);
        let dims = match crate::io::image_dimensions(&image_path) {
            Ok(d) => Some(d),
            Err(_) => {
                report.errors.push(VerifyIssue {
                    line: line_no,
                    message: format!("missing or unreadable file {}", record.file),
                });
                None
            }
        };

        match &record.task {
            TaskData::Classification {
                class,
                param,
                level_index,
            } => {
                if let Err(e) = DistortionSpec::new(*class, *param) {
                    report.errors.push(VerifyIssue {
                        line: line_no,
                        message: e.to_string(),
                    });
                }
                if *level_index > 2 {
                    report.errors.push(VerifyIssue {
                        line: line_no,
                        message: format!("level index {level_index} outside 0..3"),
                    });
                }
            }
            TaskData::Detection { regions, .. } => {
                if regions.is_empty() {
                    report.errors.push(VerifyIssue {
                        line: line_no,
                        message: "detection record has no regions".into(),
                    });
                }
                for region in regions {
                    match region.rect() {
                        Ok(rect) => {
                            if let Some((w, h)) = dims {
                                if !rect.fits_within(w, h) {
                                    report.errors.push(VerifyIssue {
                                        line: line_no,
                                        message: format!(
                                            "rect out of bounds: {rect:?} in {w}x{h}"
                                        ),
                                    });
                                }
                            }
                        }
                        Err(e) => report.errors.push(VerifyIssue {
                            line: line_no,
                            message: e.to_string(),
                        }),
                    }
                    if let Err(e) = DistortionSpec::new(region.class, region.param) {
                        report.errors.push(VerifyIssue {
                            line: line_no,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    if report.records == 0 {
        report.warnings.push(VerifyIssue {
            line: 0,
            message: "no records".into(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<ManifestRecord> {
        vec![
            ManifestRecord {
                file: "images/r0/gwn_l1.png".into(),
                ref_id: "r0".into(),
                split: Split::Train,
                task: TaskData::Classification {
                    class: DistortionClass::Gwn,
                    param: 0.0125,
                    level_index: 0,
                },
            },
            ManifestRecord {
                file: "images/r0/det_000.png".into(),
                ref_id: "r0".into(),
                split: Split::Test,
                task: TaskData::Detection {
                    variant: Variant::Basic,
                    regions: vec![RegionRecord {
                        x: 10,
                        y: 20,
                        w: 100,
                        h: 120,
                        class: DistortionClass::Jpeg,
                        param: 12.0,
                    }],
                },
            },
        ]
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let records = sample_records();
        write_manifest(&path, &records).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut records = sample_records();
        records.truncate(1);
        write_manifest(&path, &records).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        std::fs::write(&path, text).unwrap();
        let err = read_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err}");
    }

    #[test]
    fn verify_flags_bounds_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let img_dir = dir.path().join("images/r0");
        std::fs::create_dir_all(&img_dir).unwrap();
        let img = crate::image::ByteImage::filled(300, 300, 3, 40).unwrap();
        crate::io::save_image(&img, &img_dir.join("det_000.png"), crate::io::SaveFormat::Png)
            .unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut records = sample_records();
        // Out-of-bounds rect: x + w = 260 + 50 > 300.
        if let TaskData::Detection { regions, .. } = &mut records[1].task {
            regions[0].x = 260;
            regions[0].w = 50;
        }
        write_manifest(&path, &records).unwrap();
        let report = verify_manifest(&path).unwrap();
        assert!(!report.ok());
        assert!(report
            .errors
            .iter()
            .any(|e| e.line == 2 && e.message.contains("rect out of bounds")));
        assert!(report
            .errors
            .iter()
            .any(|e| e.line == 1 && e.message.contains("missing")));
    }

    #[test]
    fn verify_empty_manifest_warns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
        let report = verify_manifest(&path).unwrap();
        assert!(report.ok());
        assert!(report.warnings.iter().any(|w| w.message == "no records"));
    }

    #[test]
    fn split_assignment_exact_fractions() {
        let spec = SplitSpec::classification(5);
        let splits = spec.assign(100).unwrap();
        let count = |s: Split| splits.iter().filter(|&&x| x == s).count();
        assert_eq!(count(Split::Train), 60);
        assert_eq!(count(Split::Val), 20);
        assert_eq!(count(Split::Test), 20);
        // Deterministic under the same seed.
        assert_eq!(splits, spec.assign(100).unwrap());
        // Detection split has no validation share.
        let det = SplitSpec::detection(5);
        let splits = det.assign(5).unwrap();
        assert_eq!(splits.iter().filter(|&&x| x == Split::Train).count(), 4);
        assert_eq!(splits.iter().filter(|&&x| x == Split::Test).count(), 1);
    }

    #[test]
    fn split_fractions_validated() {
        let bad = SplitSpec {
            train: 0.7,
            val: 0.2,
            test: 0.2,
            unit: SplitUnit::Reference,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }
}
