//! Non-local means, used here as a *distortion* (over-smoothing).
//!
//! Weights follow `w(i, j) = exp(-d2(i, j) / h^2)` where `d2` is the mean
//! squared difference between the patches centered at `i` and `j` (uniform
//! patch weighting, per-channel distances averaged) and `j` ranges over the
//! `(2 * patch_distance + 1)^2` search window. Borders are reflect-padded.
//!
//! The implementation walks search offsets and box-filters each shifted
//! difference image with an integral image, which is algebraically the same
//! sum as the per-pixel patch comparison; the quadruple-loop reference in
//! the tests pins the equivalence.

use super::blur::reflect_index;
use crate::error::{Error, Result};
use crate::image::{Image, RealImage};

pub const DEFAULT_PATCH_SIZE: u32 = 7;
pub const DEFAULT_PATCH_DISTANCE: u32 = 11;

/// Reflect-pads an image by `pad` pixels on every side, returning the
/// padded plane as `(data, padded_w, padded_h)`.
fn reflect_pad(img: &RealImage, pad: usize) -> (Vec<f64>, usize, usize) {
    let (w, h, ch) = (
        img.width() as usize,
        img.height() as usize,
        img.channels() as usize,
    );
    let wp = w + 2 * pad;
    let hp = h + 2 * pad;
    let mut out = vec![0.0f64; wp * hp * ch];
    for y in 0..hp {
        let sy = reflect_index(y as i64 - pad as i64, h as i64);
        for x in 0..wp {
            let sx = reflect_index(x as i64 - pad as i64, w as i64);
            let src = (sy * w + sx) * ch;
            let dst = (y * wp + x) * ch;
            out[dst..dst + ch].copy_from_slice(&img.data()[src..src + ch]);
        }
    }
    (out, wp, hp)
}

/// Non-local means with filtering strength `h`.
pub fn apply_nlm_denoise(
    img: &RealImage,
    h: f64,
    patch_size: u32,
    patch_distance: u32,
) -> Result<RealImage> {
    if !(h > 0.0) {
        return Err(Error::Param(format!("nlm h {h} must be > 0")));
    }
    if patch_size == 0 || patch_size % 2 == 0 || patch_distance == 0 {
        return Err(Error::Param(format!(
            "invalid patch geometry: size {patch_size}, distance {patch_distance}"
        )));
    }
    if img.width() < patch_size || img.height() < patch_size {
        return Err(Error::Param(format!(
            "invalid patch geometry: {}x{} image smaller than {patch_size} patch",
            img.width(),
            img.height()
        )));
    }
    let (w, hgt, ch) = (
        img.width() as usize,
        img.height() as usize,
        img.channels() as usize,
    );
    let pr = (patch_size / 2) as i64;
    let sr = patch_distance as i64;
    let pad = (pr + sr) as usize;
    let (padded, wp, hp) = reflect_pad(img, pad);
    let patch_area = (patch_size * patch_size) as f64;
    let inv_h2 = 1.0 / (h * h);

    let n = w * hgt;
    let mut weight_sum = vec![0.0f64; n];
    let mut value_sum = vec![0.0f64; n * ch];
    let mut diff = vec![0.0f64; wp * hp];
    let mut integral = vec![0.0f64; (wp + 1) * (hp + 1)];

    for dy in -sr..=sr {
        for dx in -sr..=sr {
            // Shifted squared-difference plane (channel mean).
            for y in 0..hp {
                let sy = y as i64 + dy;
                let row = &mut diff[y * wp..(y + 1) * wp];
                if sy < 0 || sy >= hp as i64 {
                    row.fill(0.0);
                    continue;
                }
                let sy = sy as usize;
                for (x, d) in row.iter_mut().enumerate() {
                    let sx = x as i64 + dx;
                    *d = if sx < 0 || sx >= wp as i64 {
                        0.0
                    } else {
                        let a = (y * wp + x) * ch;
                        let b = (sy * wp + sx as usize) * ch;
                        let mut acc = 0.0;
                        for c in 0..ch {
                            let e = padded[a + c] - padded[b + c];
                            acc += e * e;
                        }
                        acc / ch as f64
                    };
                }
            }
            // Integral image over the difference plane.
            for y in 0..hp {
                let mut row_acc = 0.0;
                for x in 0..wp {
                    row_acc += diff[y * wp + x];
                    integral[(y + 1) * (wp + 1) + x + 1] =
                        integral[y * (wp + 1) + x + 1] + row_acc;
                }
            }
            // Accumulate weighted contributions for every output pixel.
            for oy in 0..hgt {
                let cy = oy + pad;
                let (y0, y1) = (cy - pr as usize, cy + pr as usize + 1);
                for ox in 0..w {
                    let cx = ox + pad;
                    let (x0, x1) = (cx - pr as usize, cx + pr as usize + 1);
                    let patch_ssd = integral[y1 * (wp + 1) + x1]
                        - integral[y0 * (wp + 1) + x1]
                        - integral[y1 * (wp + 1) + x0]
                        + integral[y0 * (wp + 1) + x0];
                    let d2 = patch_ssd / patch_area;
                    let wgt = (-d2 * inv_h2).exp();
                    let o = oy * w + ox;
                    weight_sum[o] += wgt;
                    let src = (((cy as i64 + dy) as usize) * wp + (cx as i64 + dx) as usize) * ch;
                    for c in 0..ch {
                        value_sum[o * ch + c] += wgt * padded[src + c];
                    }
                }
            }
        }
    }

    let mut data = vec![0.0f64; n * ch];
    for o in 0..n {
        for c in 0..ch {
            data[o * ch + c] = value_sum[o * ch + c] / weight_sum[o];
        }
    }
    Image::new(img.width(), img.height(), img.channels(), data)
}
