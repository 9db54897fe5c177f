//! Whole-image inference: grid-averaged classification and sliding-window
//! detection with connected components and cross-class NMS.

use rayon::prelude::*;

use super::net::{argmax, conv_forward, forward_trace, Architecture, PatchClassifierModel};
use super::train::extract_patch;
use crate::distort::{DistortionClass, ALL_CLASSES, DISTORTION_CLASSES};
use crate::error::{Error, Result};
use crate::image::{RealImage, Rect};

/// One detection: region, class, confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub rect: Rect,
    pub class: DistortionClass,
    pub score: f64,
}

/// Sliding-window detector knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    /// Window step in pixels.
    pub stride: u32,
    /// Class-probability threshold for map activation.
    pub threshold: f64,
    /// Cross-class suppression threshold on IoU.
    pub nms_iou: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            stride: 8,
            threshold: 0.5,
            nms_iou: 0.45,
        }
    }
}

fn check_min_size(img: &RealImage, arch: &Architecture) -> Result<()> {
    if img.width() < arch.patch_size || img.height() < arch.patch_size {
        return Err(Error::Param(format!(
            "image {}x{} smaller than the {} patch",
            img.width(),
            img.height(),
            arch.patch_size
        )));
    }
    Ok(())
}

/// Averages the probability vectors of a deterministic 5x5 patch grid and
/// takes the argmax over all classes (ties to the lowest class code).
pub fn classify_image(
    model: &PatchClassifierModel,
    img: &RealImage,
) -> Result<(DistortionClass, f64)> {
    let arch = &model.arch;
    check_min_size(img, arch)?;
    let span_x = img.width() - arch.patch_size;
    let span_y = img.height() - arch.patch_size;
    let mut mean = vec![0.0f64; arch.num_classes as usize];
    for gy in 0..5u32 {
        for gx in 0..5u32 {
            let x = gx * span_x / 4;
            let y = gy * span_y / 4;
            let patch = extract_patch(img, x, y, arch);
            let probs = forward_trace(model, &patch, None).probs;
            for (m, p) in mean.iter_mut().zip(&probs) {
                *m += p / 25.0;
            }
        }
    }
    let best = argmax(&mean);
    Ok((ALL_CLASSES[best], mean[best]))
}

/// Per-window class probabilities on the stride grid. Returns window
/// origins along each axis and a row-major `[ny * nx]` grid of probability
/// vectors.
pub(crate) fn window_probability_maps(
    model: &PatchClassifierModel,
    img: &RealImage,
    stride: u32,
) -> Result<(Vec<u32>, Vec<u32>, Vec<Vec<f64>>)> {
    let arch = &model.arch;
    check_min_size(img, arch)?;
    if stride == 0 {
        return Err(Error::Param("stride must be >= 1".into()));
    }
    let xs: Vec<u32> = (0..=img.width() - arch.patch_size)
        .step_by(stride as usize)
        .collect();
    let ys: Vec<u32> = (0..=img.height() - arch.patch_size)
        .step_by(stride as usize)
        .collect();

    // Shared-feature evaluation: convolution and pooling commute with the
    // window offset as long as every window origin lands on the pooling
    // grid, i.e. even strides and an even conv1 output. The arithmetic per
    // window is identical to the per-patch forward pass.
    let probs = if stride % 2 == 0 && arch.conv1_out() % 2 == 0 {
        windows_shared(model, img, &xs, &ys)
    } else {
        windows_direct(model, img, &xs, &ys)
    };
    Ok((xs, ys, probs))
}

fn windows_direct(
    model: &PatchClassifierModel,
    img: &RealImage,
    xs: &[u32],
    ys: &[u32],
) -> Vec<Vec<f64>> {
    let cells: Vec<(u32, u32)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    cells
        .par_iter()
        .map(|&(x, y)| {
            let patch = extract_patch(img, x, y, &model.arch);
            forward_trace(model, &patch, None).probs
        })
        .collect()
}

fn windows_shared(
    model: &PatchClassifierModel,
    img: &RealImage,
    xs: &[u32],
    ys: &[u32],
) -> Vec<Vec<f64>> {
    let arch = &model.arch;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let c0 = arch.input_channels as usize;
    let img_ch = img.channels() as usize;

    // Whole image, channels-first (grayscale broadcast). Samples pass
    // through f32 exactly like patch extraction does, so both paths see
    // identical inputs.
    let mut input = vec![0.0f64; c0 * w * h];
    for c in 0..c0 {
        let src_c = if img_ch == c0 { c } else { 0 };
        for y in 0..h {
            for x in 0..w {
                input[(c * h + y) * w + x] =
                    img.data()[(y * w + x) * img_ch + src_c] as f32 as f64;
            }
        }
    }

    let (f1, k1) = (arch.conv1_filters as usize, arch.conv1_kernel as usize);
    let (f2, k2) = (arch.conv2_filters as usize, arch.conv2_kernel as usize);
    let (h1, w1) = (h - k1 + 1, w - k1 + 1);
    let mut feat1 = vec![0.0f64; f1 * h1 * w1];
    conv_forward(
        &input, c0, h, w, &model.conv1_w, &model.conv1_b, f1, k1, &mut feat1,
    );
    for v in &mut feat1 {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    // Global 2x2 pool on the even grid every window aligns to.
    let (hp, wp) = (h1 / 2, w1 / 2);
    let mut pooled = vec![0.0f64; f1 * hp * wp];
    for c in 0..f1 {
        for py in 0..hp {
            for px in 0..wp {
                let base = (c * h1 + 2 * py) * w1 + 2 * px;
                let m = feat1[base]
                    .max(feat1[base + 1])
                    .max(feat1[base + w1])
                    .max(feat1[base + w1 + 1]);
                pooled[(c * hp + py) * wp + px] = m;
            }
        }
    }

    let (h2, w2) = (hp - k2 + 1, wp - k2 + 1);
    let mut feat2 = vec![0.0f64; f2 * h2 * w2];
    conv_forward(
        &pooled, f1, hp, wp, &model.conv2_w, &model.conv2_b, f2, k2, &mut feat2,
    );

    let o2 = arch.conv2_out() as usize;
    let classes = arch.num_classes as usize;
    let inv_area = 1.0 / (o2 * o2) as f64;
    let cells: Vec<(u32, u32)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    cells
        .par_iter()
        .map(|&(wx, wy)| {
            let (ox, oy) = (wx as usize / 2, wy as usize / 2);
            let mut gap = vec![0.0f64; f2];
            for (f, g) in gap.iter_mut().enumerate() {
                let mut acc = 0.0;
                for y in 0..o2 {
                    let row = &feat2[(f * h2 + oy + y) * w2 + ox..][..o2];
                    for &v in row {
                        if v > 0.0 {
                            acc += v;
                        }
                    }
                }
                *g = acc * inv_area;
            }
            let mut logits = vec![0.0f64; classes];
            for (o, logit) in logits.iter_mut().enumerate() {
                let mut acc = model.fc_b[o] as f64;
                for (i, g) in gap.iter().enumerate() {
                    acc += model.fc_w[o * f2 + i] as f64 * g;
                }
                *logit = acc;
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= sum;
            }
            probs
        })
        .collect()
}

/// Connected components (8-connectivity) of one class's thresholded
/// probability map, turned into scored boxes.
fn class_components(
    class: DistortionClass,
    probs: &[Vec<f64>],
    xs: &[u32],
    ys: &[u32],
    threshold: f64,
    image_w: u32,
    image_h: u32,
    half: u32,
) -> Vec<ScoredBox> {
    let (nx, ny) = (xs.len(), ys.len());
    let ci = class.code() as usize;
    let mut visited = vec![false; nx * ny];
    let mut boxes = Vec::new();
    for start in 0..nx * ny {
        if visited[start] || probs[start][ci] < threshold {
            continue;
        }
        // Flood fill.
        let mut stack = vec![start];
        visited[start] = true;
        let mut cells = Vec::new();
        while let Some(cell) = stack.pop() {
            cells.push(cell);
            let (cy, cx) = (cell / nx, cell % nx);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny_, nx_) = (cy as i64 + dy, cx as i64 + dx);
                    if ny_ < 0 || nx_ < 0 || ny_ >= ny as i64 || nx_ >= nx as i64 {
                        continue;
                    }
                    let neighbor = ny_ as usize * nx + nx_ as usize;
                    if !visited[neighbor] && probs[neighbor][ci] >= threshold {
                        visited[neighbor] = true;
                        stack.push(neighbor);
                    }
                }
            }
        }
        // Bounding rect of window centers, expanded by half a window and
        // clipped; a single window recovers exactly its own rect.
        let mut min_cx = u32::MAX;
        let mut max_cx = 0;
        let mut min_cy = u32::MAX;
        let mut max_cy = 0;
        let mut score = 0.0;
        for &cell in &cells {
            let (cy, cx) = (cell / nx, cell % nx);
            let center_x = xs[cx] + half;
            let center_y = ys[cy] + half;
            min_cx = min_cx.min(center_x);
            max_cx = max_cx.max(center_x);
            min_cy = min_cy.min(center_y);
            max_cy = max_cy.max(center_y);
            score += probs[cell][ci];
        }
        score /= cells.len() as f64;
        let x0 = min_cx.saturating_sub(half);
        let y0 = min_cy.saturating_sub(half);
        let x1 = (max_cx + half).min(image_w);
        let y1 = (max_cy + half).min(image_h);
        if let Ok(rect) = Rect::new(x0, y0, x1 - x0, y1 - y0) {
            boxes.push(ScoredBox { rect, class, score });
        }
    }
    boxes
}

/// Scores every window at the given stride, forms per-class components,
/// and applies cross-class NMS. Boxes come back sorted by descending score.
pub fn detect(
    model: &PatchClassifierModel,
    img: &RealImage,
    params: &DetectParams,
) -> Result<Vec<ScoredBox>> {
    let (xs, ys, probs) = window_probability_maps(model, img, params.stride)?;
    let half = model.arch.patch_size / 2;
    let mut boxes: Vec<ScoredBox> = DISTORTION_CLASSES
        .iter()
        .flat_map(|&class| {
            class_components(
                class,
                &probs,
                &xs,
                &ys,
                params.threshold,
                img.width(),
                img.height(),
                half,
            )
        })
        .collect();

    // Highest score wins across classes; full deterministic order.
    boxes.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.class.code().cmp(&b.class.code()))
            .then(a.rect.y.cmp(&b.rect.y))
            .then(a.rect.x.cmp(&b.rect.x))
    });
    let mut kept: Vec<ScoredBox> = Vec::new();
    for candidate in boxes {
        if kept
            .iter()
            .all(|k| k.rect.iou(&candidate.rect) < params.nms_iou)
        {
            kept.push(candidate);
        }
    }
    Ok(kept)
}
