//! Patch sampling and the SGD training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::net::{backward, Architecture, PatchClassifierModel, SgdMomentum};
use crate::dataset::{ManifestRecord, Split, TaskData};
use crate::distort::DistortionClass;
use crate::error::{Error, Result};
use crate::image::{RealImage, Rect};
use crate::io::load_image;
use crate::rng::RngStream;

const STREAM_PATCHES: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_SHUFFLE: u64 = 6;

/// Hyperparameters for one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub patches_per_image: u32,
    pub seed: u64,
    /// When set, every sampled patch also enters the epoch stream mirrored.
    pub flip_augmentation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            epochs: 4,
            patches_per_image: 16,
            seed: 0,
            flip_augmentation: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0)
            || !(self.momentum >= 0.0)
            || self.batch_size == 0
            || self.epochs == 0
            || self.patches_per_image == 0
        {
            return Err(Error::Param(
                "training hyperparameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub loss: f64,
    pub accuracy: f64,
}

/// Training-curve log as CSV: `epoch,loss,train_accuracy`.
pub fn curve_to_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,train_accuracy\n");
    for row in curve {
        out.push_str(&format!("{},{},{}\n", row.epoch, row.loss, row.accuracy));
    }
    out
}

/// A trained model together with its training curve.
pub struct TrainedModel {
    pub model: PatchClassifierModel,
    pub curve: Vec<EpochStats>,
}

/// Channels-first patch at (x, y) from an interleaved image; grayscale
/// broadcasts over the input channels.
pub(crate) fn extract_patch(img: &RealImage, x: u32, y: u32, arch: &Architecture) -> Vec<f32> {
    let s = arch.patch_size as usize;
    let c_in = arch.input_channels as usize;
    let img_ch = img.channels() as usize;
    let w = img.width() as usize;
    let mut buf = vec![0.0f32; c_in * s * s];
    for c in 0..c_in {
        let src_c = if img_ch == c_in { c } else { 0 };
        for py in 0..s {
            let row = (y as usize + py) * w;
            for px in 0..s {
                buf[(c * s + py) * s + px] =
                    img.data()[(row + x as usize + px) * img_ch + src_c] as f32;
            }
        }
    }
    buf
}

/// Horizontal mirror of a channels-first patch.
fn mirror_patch(patch: &[f32], arch: &Architecture) -> Vec<f32> {
    let s = arch.patch_size as usize;
    let c_in = arch.input_channels as usize;
    let mut out = vec![0.0f32; patch.len()];
    for c in 0..c_in {
        for y in 0..s {
            for x in 0..s {
                out[(c * s + y) * s + x] = patch[(c * s + y) * s + (s - 1 - x)];
            }
        }
    }
    out
}

/// Sampled training patches from one manifest record. Classification
/// records label every patch with the image's class. Detection records
/// label a patch by the region containing the patch center; patches fully
/// outside all regions are `Pristine`; patches that touch a region without
/// centering in one are skipped.
fn sample_record(
    record: &ManifestRecord,
    base_dir: &Path,
    arch: &Architecture,
    patches_per_image: u32,
    rng: &RngStream,
) -> Result<Vec<(Vec<f32>, u32)>> {
    let img = load_image(&base_dir.join(&record.file))?.to_real();
    let s = arch.patch_size;
    if img.width() < s || img.height() < s {
        return Err(Error::Param(format!(
            "image {} is smaller than the {s}x{s} patch",
            record.file
        )));
    }
    let regions: Option<Vec<(Rect, DistortionClass)>> = match &record.task {
        TaskData::Classification { .. } => None,
        TaskData::Detection { regions, .. } => Some(
            regions
                .iter()
                .map(|r| Ok((r.rect()?, r.class)))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let mut r = rng.rng();
    let mut out = Vec::with_capacity(patches_per_image as usize);
    for _ in 0..patches_per_image {
        let x = r.random_range(0..=img.width() - s);
        let y = r.random_range(0..=img.height() - s);
        let label = match (&record.task, &regions) {
            (TaskData::Classification { class, .. }, _) => class.code(),
            (_, Some(regions)) => {
                let (cx, cy) = (x + s / 2, y + s / 2);
                let patch_rect = Rect::new(x, y, s, s)?;
                if let Some((_, class)) =
                    regions.iter().find(|(rect, _)| rect.contains_point(cx, cy))
                {
                    class.code()
                } else if regions
                    .iter()
                    .any(|(rect, _)| rect.intersection_area(&patch_rect) > 0)
                {
                    // Straddling patch: ambiguous supervision, skipped.
                    continue;
                } else {
                    DistortionClass::Pristine.code()
                }
            }
            _ => unreachable!(),
        };
        out.push((extract_patch(&img, x, y, arch), label));
    }
    Ok(out)
}

/// Trains the patch classifier on the train split of a manifest.
/// Deterministic given the config seed, regardless of thread count.
pub fn train(
    records: &[ManifestRecord],
    base_dir: &Path,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let arch = Architecture::default();
    let train_records: Vec<&ManifestRecord> = records
        .iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    if train_records.is_empty() {
        return Err(Error::Empty("manifest has no train-split records".into()));
    }

    let patch_rng = RngStream::new(cfg.seed, STREAM_PATCHES);
    let per_record: Vec<Vec<(Vec<f32>, u32)>> = train_records
        .par_iter()
        .map(|record| {
            sample_record(
                record,
                base_dir,
                &arch,
                cfg.patches_per_image,
                &patch_rng.derive_str(&record.file),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples: Vec<(Vec<f32>, u32)> = per_record.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::Empty("no usable training patches".into()));
    }
    if cfg.flip_augmentation {
        let mirrored: Vec<(Vec<f32>, u32)> = samples
            .iter()
            .map(|(p, l)| (mirror_patch(p, &arch), *l))
            .collect();
        samples.extend(mirrored);
    }

    let mut model = PatchClassifierModel::init(arch, &RngStream::new(cfg.seed, STREAM_INIT))?;
    model.train_seed = cfg.seed;
    let mut optimizer = SgdMomentum::new(&arch);
    let shuffle_rng = RngStream::new(cfg.seed, STREAM_SHUFFLE);
    let mut curve = Vec::with_capacity(cfg.epochs as usize);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng.derive(epoch as u64).rng());
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let patches: Vec<&[f32]> = batch.iter().map(|&i| samples[i].0.as_slice()).collect();
            let labels: Vec<u32> = batch.iter().map(|&i| samples[i].1).collect();
            let (grads, stats) = backward(&model, &patches, &labels)?;
            optimizer.step(&mut model, &grads, cfg.learning_rate, cfg.momentum);
            loss_sum += stats.loss * stats.count as f64;
            correct += stats.correct;
        }
        if !model.all_finite() {
            return Err(Error::Diverged(format!(
                "non-finite parameters after epoch {}",
                epoch + 1
            )));
        }
        curve.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
        });
    }
    model.epochs_trained = cfg.epochs;
    Ok(TrainedModel { model, curve })
}
