//! Procedural reference images for smoke tests and demos.
//!
//! Real photographic references are the intended input; this generator
//! exists so the pipeline can be exercised end to end without shipping
//! image data. The output mixes smooth gradients, colored blobs, and fine
//! texture so that every distortion class has something to bite on.

use rand::Rng;

use crate::distort::apply_gaussian_blur;
use crate::image::{ByteImage, RealImage};
use crate::rng::RngStream;

/// Deterministic pseudo-photographic image: gradient background, soft
/// colored blobs, a few hard edges, and two scales of texture noise.
pub fn synthetic_reference(width: u32, height: u32, rng: &RngStream) -> ByteImage {
    let mut r = rng.rng();
    let (w, h) = (width as usize, height as usize);

    // Gradient background between two random colors, random orientation.
    let c0: [f64; 3] = [r.random(), r.random(), r.random()];
    let c1: [f64; 3] = [r.random(), r.random(), r.random()];
    let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut data = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let t = 0.5
                + 0.5 * (dx * (x as f64 / w as f64 - 0.5) + dy * (y as f64 / h as f64 - 0.5));
            for c in 0..3 {
                data[(y * w + x) * 3 + c] = c0[c] + (c1[c] - c0[c]) * t;
            }
        }
    }

    // Soft elliptical blobs.
    let blobs = 18 + r.random_range(0..8);
    for _ in 0..blobs {
        let cx: f64 = r.random_range(0.0..w as f64);
        let cy: f64 = r.random_range(0.0..h as f64);
        let rx: f64 = r.random_range(0.04..0.25) * w as f64;
        let ry: f64 = r.random_range(0.04..0.25) * h as f64;
        let color: [f64; 3] = [r.random(), r.random(), r.random()];
        let opacity: f64 = r.random_range(0.3..0.9);
        let x0 = (cx - 3.0 * rx).max(0.0) as usize;
        let x1 = ((cx + 3.0 * rx) as usize + 1).min(w);
        let y0 = (cy - 3.0 * ry).max(0.0) as usize;
        let y1 = ((cy + 3.0 * ry) as usize + 1).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
                let a = opacity * (-d).exp();
                for c in 0..3 {
                    let v = &mut data[(y * w + x) * 3 + c];
                    *v += (color[c] - *v) * a;
                }
            }
        }
    }

    // A few hard-edged bars for sharp structure.
    for _ in 0..4 {
        let bw = r.random_range(w / 24..w / 6).max(2);
        let bh = r.random_range(h / 24..h / 6).max(2);
        let bx = r.random_range(0..w - bw);
        let by = r.random_range(0..h - bh);
        let color: [f64; 3] = [r.random(), r.random(), r.random()];
        for y in by..by + bh {
            for x in bx..bx + bw {
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = color[c];
                }
            }
        }
    }

    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    let mut img = RealImage::new(width, height, 3, data).unwrap();

    // Coarse texture: blurred white noise.
    let coarse: Vec<f64> = (0..w * h).map(|_| r.random::<f64>() - 0.5).collect();
    let coarse = RealImage::new(width, height, 1, coarse).unwrap();
    let coarse = apply_gaussian_blur(&coarse, 1.2).unwrap();
    // Fine texture: raw white noise, small amplitude.
    for (i, pixel) in img.data_mut().chunks_exact_mut(3).enumerate() {
        let grain = 0.10 * coarse.data()[i] + 0.015 * (r.random::<f64>() - 0.5);
        for v in pixel {
            *v = (*v + grain).clamp(0.0, 1.0);
        }
    }
    img.to_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_textured() {
        let a = synthetic_reference(96, 80, &RngStream::new(1, 1));
        let b = synthetic_reference(96, 80, &RngStream::new(1, 1));
        assert_eq!(a, b);
        let c = synthetic_reference(96, 80, &RngStream::new(1, 2));
        assert_ne!(a, c);
        // Enough local variation for patch statistics to matter.
        let real = a.to_real();
        let mean = real.data().iter().sum::<f64>() / real.data().len() as f64;
        let var = real.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / real.data().len() as f64;
        assert!(var > 0.005, "variance {var} too small");
    }
}
