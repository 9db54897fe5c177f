//! Bilinear resampling with half-pixel-centered coordinates.

use crate::error::{Error, Result};
use crate::image::{Image, RealImage};

/// One axis of the sampling plan: source pair and interpolation weight.
struct AxisTap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(n_in: u32, n_out: u32) -> Vec<AxisTap> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            // Half-pixel centers: output center maps into source coordinates,
            // indices clamped at the edges.
            let src = (o as f64 + 0.5) * scale - 0.5;
            let floor = src.floor();
            let lo = (floor.max(0.0) as usize).min(n_in as usize - 1);
            let hi = (lo + 1).min(n_in as usize - 1);
            let frac = if floor < 0.0 { 0.0 } else { src - floor };
            AxisTap { lo, hi, frac }
        })
        .collect()
}

/// Bilinear resize of a normalized image. Output samples are convex
/// combinations of input samples, so the value range never grows.
pub fn resize_bilinear(img: &RealImage, out_w: u32, out_h: u32) -> Result<RealImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Geometry(format!(
            "resize target {out_w}x{out_h} must be at least 1x1"
        )));
    }
    let ch = img.channels() as usize;
    let xs = axis_taps(img.width(), out_w);
    let ys = axis_taps(img.height(), out_h);
    let src = img.data();
    let in_row = img.width() as usize * ch;
    let mut data = Vec::with_capacity(out_w as usize * out_h as usize * ch);
    for ty in &ys {
        let row_lo = &src[ty.lo * in_row..(ty.lo + 1) * in_row];
        let row_hi = &src[ty.hi * in_row..(ty.hi + 1) * in_row];
        for tx in &xs {
            for c in 0..ch {
                let tl = row_lo[tx.lo * ch + c];
                let tr = row_lo[tx.hi * ch + c];
                let bl = row_hi[tx.lo * ch + c];
                let br = row_hi[tx.hi * ch + c];
                let top = tl + (tr - tl) * tx.frac;
                let bot = bl + (br - bl) * tx.frac;
                data.push(top + (bot - top) * ty.frac);
            }
        }
    }
    Image::new(out_w, out_h, img.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the bilinear formula at one output pixel,
    /// independent of the row/column plan used by the implementation.
    fn oracle_pixel(img: &RealImage, out_w: u32, out_h: u32, ox: u32, oy: u32, c: u32) -> f64 {
        let sample = |x: i64, y: i64| {
            let xc = x.clamp(0, img.width() as i64 - 1) as u32;
            let yc = y.clamp(0, img.height() as i64 - 1) as u32;
            img.get(xc, yc, c)
        };
        let sx = (ox as f64 + 0.5) * img.width() as f64 / out_w as f64 - 0.5;
        let sy = (oy as f64 + 0.5) * img.height() as f64 / out_h as f64 - 0.5;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = sample(x0, y0);
        let v10 = sample(x0 + 1, y0);
        let v01 = sample(x0, y0 + 1);
        let v11 = sample(x0 + 1, y0 + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    #[test]
    fn constant_is_preserved() {
        let img = RealImage::filled(5, 3, 3, 0.5).unwrap();
        for (w, h) in [(10u32, 7u32), (2, 2), (5, 3)] {
            let out = resize_bilinear(&img, w, h).unwrap();
            assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
        }
        let down = resize_bilinear(&RealImage::filled(4, 4, 1, 0.5).unwrap(), 2, 2).unwrap();
        assert!(down.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn matches_scalar_oracle_on_checker() {
        let img = RealImage::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize_bilinear(&img, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = oracle_pixel(&img, 4, 4, x, y, 0);
                let got = out.get(x, y, 0);
                assert!((got - want).abs() < 1e-6, "({x},{y}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn matches_scalar_oracle_on_random() {
        use rand::Rng;
        let mut rng = crate::rng::RngStream::new(11, 0).rng();
        let data: Vec<f64> = (0..7 * 5 * 3).map(|_| rng.random::<f64>()).collect();
        let img = RealImage::new(7, 5, 3, data).unwrap();
        for (w, h) in [(13u32, 9u32), (3, 2), (7, 5), (1, 1)] {
            let out = resize_bilinear(&img, w, h).unwrap();
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let want = oracle_pixel(&img, w, h, x, y, c);
                        assert!((out.get(x, y, c) - want).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
