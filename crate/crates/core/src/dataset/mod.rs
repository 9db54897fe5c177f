//! Dataset builders: synthesize, persist, and index the classification and
//! detection datasets.
//!
//! Layout under the output directory:
//!
//! ```text
//! out/
//!   manifest.jsonl            one JSON record per image
//!   report.txt                skipped references (detection builds)
//!   images/<ref_id>/<item>.png
//! ```

mod manifest;

pub use manifest::{
    read_manifest, verify_manifest, write_manifest, ManifestRecord, RegionRecord, Split,
    SplitSpec, SplitUnit, TaskData, VerifyIssue, VerifyReport,
};

use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::distort::{self, DistortionSpec, DISTORTION_CLASSES};
use crate::error::{Error, Result};
use crate::io::{load_image, save_image, SaveFormat};
use crate::region::{preset, synthesize_detection_image, Variant};
use crate::rng::RngStream;

/// References found in a directory: `(ref_id, path)`, sorted by id.
/// The id is the file stem; PNG and JPEG files are accepted.
pub fn list_references(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut refs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            refs.push((id, path));
        }
    }
    if refs.is_empty() {
        return Err(Error::Empty(format!(
            "no reference images (png/jpeg) in {}",
            dir.display()
        )));
    }
    refs.sort();
    Ok(refs)
}

/// Result of a classification build.
#[derive(Debug)]
pub struct ClassificationBuild {
    pub records: Vec<ManifestRecord>,
    pub manifest_path: PathBuf,
}

/// Builds the classification dataset: every reference yields 24 images
/// (8 distortion classes x 3 severity levels), stored as PNG at native
/// resolution, with a 60/20/20-style split from `split`.
pub fn build_classification_dataset(
    refs_dir: &Path,
    out_dir: &Path,
    split: &SplitSpec,
    master_seed: u64,
) -> Result<ClassificationBuild> {
    split.validate()?;
    let refs = list_references(refs_dir)?;
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;

    let ref_splits = match split.unit {
        SplitUnit::Reference => split.assign(refs.len())?,
        // Per-image assignment happens after synthesis ordering is known.
        SplitUnit::Image => split.assign(refs.len() * DISTORTION_CLASSES.len() * 3)?,
    };

    let base_rng = RngStream::new(master_seed, manifest::STREAM_CLASSIFICATION);
    let per_ref: Vec<Vec<ManifestRecord>> = refs
        .par_iter()
        .enumerate()
        .map(|(ref_idx, (ref_id, path))| -> Result<Vec<ManifestRecord>> {
            let reference = load_image(path)?.to_real();
            let ref_rng = base_rng.derive_str(ref_id);
            let dir = out_dir.join("images").join(ref_id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut records = Vec::with_capacity(DISTORTION_CLASSES.len() * 3);
            for class in DISTORTION_CLASSES {
                for level in 0..3u8 {
                    let spec = DistortionSpec::at_level(class, level as usize)?;
                    let item_rng = ref_rng.derive(class.code() as u64 * 3 + level as u64);
                    let distorted = distort::apply(&reference, &spec, &item_rng)?;
                    let name = format!("{}_l{}.png", class.name(), level + 1);
                    save_image(&distorted.to_bytes(), &dir.join(&name), SaveFormat::Png)?;
                    let item_index =
                        (ref_idx * DISTORTION_CLASSES.len() * 3) + records.len();
                    let assigned = match split.unit {
                        SplitUnit::Reference => ref_splits[ref_idx],
                        SplitUnit::Image => ref_splits[item_index],
                    };
                    records.push(ManifestRecord {
                        file: format!("images/{ref_id}/{name}"),
                        ref_id: ref_id.clone(),
                        split: assigned,
                        task: TaskData::Classification {
                            class,
                            param: spec.param,
                            level_index: level,
                        },
                    });
                }
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;

    let records: Vec<ManifestRecord> = per_ref.into_iter().flatten().collect();
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &records)?;
    Ok(ClassificationBuild {
        records,
        manifest_path,
    })
}

/// Result of a detection build, including references that were skipped
/// for being smaller than the working size.
pub struct DetectionBuild {
    pub records: Vec<ManifestRecord>,
    pub skipped: Vec<(String, String)>,
    pub manifest_path: PathBuf,
    pub report_path: PathBuf,
}

/// Builds a detection dataset: `per_ref` synthesized images per usable
/// reference, each with sampled locally distorted regions per `variant`.
/// Undersized references are skipped and listed in `report.txt`.
pub fn build_detection_dataset(
    refs_dir: &Path,
    out_dir: &Path,
    variant: Variant,
    per_ref: u32,
    split: &SplitSpec,
    master_seed: u64,
) -> Result<DetectionBuild> {
    split.validate()?;
    if per_ref == 0 {
        return Err(Error::Param("per-ref image count must be >= 1".into()));
    }
    let cfg = preset(variant);
    let refs = list_references(refs_dir)?;
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;

    // Partition references by size up front so splits cover usable ones only.
    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for (ref_id, path) in refs {
        let (w, h) = crate::io::image_dimensions(&path)?;
        if w < cfg.image_size || h < cfg.image_size {
            skipped.push((
                ref_id,
                format!("{w}x{h} smaller than working size {}", cfg.image_size),
            ));
        } else {
            usable.push((ref_id, path));
        }
    }
    if usable.is_empty() {
        return Err(Error::Empty(format!(
            "no reference image is at least {0}x{0}",
            cfg.image_size
        )));
    }

    let ref_splits = match split.unit {
        SplitUnit::Reference => split.assign(usable.len())?,
        SplitUnit::Image => split.assign(usable.len() * per_ref as usize)?,
    };

    let base_rng = RngStream::new(master_seed, manifest::STREAM_DETECTION);
    let per_ref_records: Vec<Vec<ManifestRecord>> = usable
        .par_iter()
        .enumerate()
        .map(|(ref_idx, (ref_id, path))| -> Result<Vec<ManifestRecord>> {
            let reference = load_image(path)?;
            let ref_rng = base_rng.derive_str(ref_id);
            let dir = out_dir.join("images").join(ref_id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut records = Vec::with_capacity(per_ref as usize);
            for item in 0..per_ref {
                let (img, annotations) =
                    synthesize_detection_image(&reference, &cfg, &ref_rng.derive(item as u64))?;
                let name = format!("det_{item:03}.png");
                save_image(&img, &dir.join(&name), SaveFormat::Png)?;
                let assigned = match split.unit {
                    SplitUnit::Reference => ref_splits[ref_idx],
                    SplitUnit::Image => ref_splits[ref_idx * per_ref as usize + item as usize],
                };
                records.push(ManifestRecord {
                    file: format!("images/{ref_id}/{name}"),
                    ref_id: ref_id.clone(),
                    split: assigned,
                    task: TaskData::Detection {
                        variant,
                        regions: annotations
                            .iter()
                            .map(RegionRecord::from_annotation)
                            .collect(),
                    },
                });
            }
            Ok(records)
        })
        .collect::<Result<Vec<_>>>()?;

    let records: Vec<ManifestRecord> = per_ref_records.into_iter().flatten().collect();
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &records)?;

    let report_path = out_dir.join("report.txt");
    let mut report = String::new();
    if skipped.is_empty() {
        report.push_str("no references skipped\n");
    }
    for (ref_id, reason) in &skipped {
        report.push_str(&format!("skipped {ref_id}: {reason}\n"));
    }
    std::fs::write(&report_path, report).map_err(|e| Error::io(&report_path, e))?;

    Ok(DetectionBuild {
        records,
        skipped,
        manifest_path,
        report_path,
    })
}

/// FNV-1a digest of a file's bytes, as fixed-width hex. Used to compare
/// artifacts for byte identity.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        for &b in &buf[..n] {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    Ok(format!("{hash:016x}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_reference;

    fn write_refs(dir: &Path, sizes: &[(u32, u32)]) {
        for (i, &(w, h)) in sizes.iter().enumerate() {
            let img = synthetic_reference(w, h, &RngStream::new(100, i as u64));
            save_image(&img, &dir.join(format!("ref{i:02}.png")), SaveFormat::Png).unwrap();
        }
    }

    #[test]
    fn classification_counts_and_histogram() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs");
        std::fs::create_dir_all(&refs).unwrap();
        write_refs(&refs, &[(48, 40)]);
        let out = dir.path().join("out");
        let build = build_classification_dataset(
            &refs,
            &out,
            &SplitSpec::classification(1),
            1,
        )
        .unwrap();
        assert_eq!(build.records.len(), 24);
        // class x level histogram exactly uniform: one per cell.
        let mut cells = std::collections::BTreeMap::new();
        for r in &build.records {
            if let TaskData::Classification {
                class, level_index, ..
            } = &r.task
            {
                *cells.entry((class.code(), *level_index)).or_insert(0) += 1;
            }
        }
        assert_eq!(cells.len(), 24);
        assert!(cells.values().all(|&n| n == 1));
        let report = verify_manifest(&build.manifest_path).unwrap();
        assert!(report.ok(), "{:?}", report.errors);
    }

    #[test]
    fn detection_build_skips_small_refs_and_verifies() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs");
        std::fs::create_dir_all(&refs).unwrap();
        write_refs(&refs, &[(304, 310), (200, 330)]);
        let out = dir.path().join("out");
        let build = build_detection_dataset(
            &refs,
            &out,
            Variant::Basic,
            2,
            &SplitSpec::detection(3),
            3,
        )
        .unwrap();
        assert_eq!(build.records.len(), 2);
        assert_eq!(build.skipped.len(), 1);
        assert!(build.skipped[0].0 == "ref01");
        let report_text = std::fs::read_to_string(&build.report_path).unwrap();
        assert!(report_text.contains("skipped ref01"));
        let report = verify_manifest(&build.manifest_path).unwrap();
        assert!(report.ok(), "{:?}", report.errors);
        for r in &build.records {
            match &r.task {
                TaskData::Detection { variant, regions } => {
                    assert_eq!(*variant, Variant::Basic);
                    assert!(!regions.is_empty());
                }
                _ => panic!("wrong task"),
            }
        }
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs");
        std::fs::create_dir_all(&refs).unwrap();
        write_refs(&refs, &[(304, 304)]);
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        for out in [&out_a, &out_b] {
            build_detection_dataset(
                &refs,
                out,
                Variant::Difficult,
                3,
                &SplitSpec::detection(9),
                9,
            )
            .unwrap();
        }
        let digest = |p: &Path| file_digest(p).unwrap();
        assert_eq!(
            digest(&out_a.join("manifest.jsonl")),
            digest(&out_b.join("manifest.jsonl"))
        );
        for item in 0..3 {
            let rel = format!("images/ref00/det_{item:03}.png");
            assert_eq!(digest(&out_a.join(&rel)), digest(&out_b.join(&rel)));
        }
    }

    #[test]
    fn empty_refs_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("refs");
        std::fs::create_dir_all(&refs).unwrap();
        let err = build_classification_dataset(
            &refs,
            &dir.path().join("out"),
            &SplitSpec::classification(0),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }
}
