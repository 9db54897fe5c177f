//! Separable Gaussian blur with reflected borders.

use crate::error::{Error, Result};
use crate::image::{Image, RealImage};

/// Maps an out-of-range index into `[0, n)` by symmetric reflection
/// (`-1 -> 0`, `-2 -> 1`, `n -> n-1`), folding as often as needed.
pub(crate) fn reflect_index(idx: i64, n: i64) -> usize {
    debug_assert!(n > 0);
    let period = 2 * n;
    let m = idx.rem_euclid(period);
    if m < n {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Discrete Gaussian taps, radius `ceil(3 sigma)`, normalized to sum 1.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Gaussian blur: separable convolution with a kernel truncated at
/// `3 sigma`, reflect border handling. Constant images pass through
/// unchanged because the kernel sums to 1.
pub fn apply_gaussian_blur(img: &RealImage, sigma: f64) -> Result<RealImage> {
    if !(sigma > 0.0) {
        return Err(Error::Param(format!("blur sigma {sigma} must be > 0")));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h, ch) = (img.width() as i64, img.height() as i64, img.channels() as usize);

    // Horizontal pass.
    let mut horiz = vec![0.0f64; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, &weight) in kernel.iter().enumerate() {
                let sx = reflect_index(x + k as i64 - radius, w);
                let base = (y as usize * w as usize + sx) * ch;
                for (c, a) in acc.iter_mut().take(ch).enumerate() {
                    *a += weight * img.data()[base + c];
                }
            }
            let base = (y as usize * w as usize + x as usize) * ch;
            horiz[base..base + ch].copy_from_slice(&acc[..ch]);
        }
    }

    // Vertical pass.
    let mut out = vec![0.0f64; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, &weight) in kernel.iter().enumerate() {
                let sy = reflect_index(y + k as i64 - radius, h);
                let base = (sy * w as usize + x as usize) * ch;
                for (c, a) in acc.iter_mut().take(ch).enumerate() {
                    *a += weight * horiz[base + c];
                }
            }
            let base = (y as usize * w as usize + x as usize) * ch;
            out[base..base + ch].copy_from_slice(&acc[..ch]);
        }
    }
    Image::new(img.width(), img.height(), img.channels(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds() {
        assert_eq!(reflect_index(-1, 5), 0);
        assert_eq!(reflect_index(-2, 5), 1);
        assert_eq!(reflect_index(5, 5), 4);
        assert_eq!(reflect_index(6, 5), 3);
        assert_eq!(reflect_index(0, 5), 0);
        // Deep folds on a tiny axis.
        assert_eq!(reflect_index(-7, 2), 1);
        assert_eq!(reflect_index(9, 2), 1);
    }

    #[test]
    fn constant_preserved() {
        let img = RealImage::filled(20, 20, 3, 0.37).unwrap();
        let out = apply_gaussian_blur(&img, 6.0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        assert!(apply_gaussian_blur(&img, 0.0).is_err());
    }

    #[test]
    fn impulse_response_matches_kernel_outer_product() {
        // sigma = 1.5 -> radius 5, kernel length 11. A 31x31 frame keeps the
        // support away from the borders.
        let sigma = 1.5;
        let kernel = gaussian_kernel(sigma);
        let radius = kernel.len() / 2;
        let mut img = RealImage::filled(31, 31, 1, 0.0).unwrap();
        img.set(15, 15, 0, 1.0);
        let out = apply_gaussian_blur(&img, sigma).unwrap();
        for y in 0..31u32 {
            for x in 0..31u32 {
                let dx = x as i64 - 15;
                let dy = y as i64 - 15;
                let want = if dx.unsigned_abs() as usize <= radius
                    && dy.unsigned_abs() as usize <= radius
                {
                    kernel[(dx + radius as i64) as usize] * kernel[(dy + radius as i64) as usize]
                } else {
                    0.0
                };
                assert!(
                    (out.get(x, y, 0) - want).abs() < 1e-9,
                    "({x},{y}): {} vs {}",
                    out.get(x, y, 0),
                    want
                );
            }
        }
        // Interior-supported impulse: total mass preserved.
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
