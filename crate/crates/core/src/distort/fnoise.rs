//! 1/f ("pink") noise synthesized in the frequency domain.
//!
//! A complex Gaussian spectrum is shaped by `1 / |nu|` (radial spatial
//! frequency, DC removed), transformed back to a real field, standardized
//! to unit variance, and added to the image scaled by `1 / factor`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::RealImage;
use crate::rng::RngStream;

/// Signed frequency of FFT bin `k` on an axis of length `n`, in cycles per
/// pixel, in `(-0.5, 0.5]`.
fn bin_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// In-place 2-D FFT (rows then columns).
fn fft2(data: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in data.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = data[y * w + x];
        }
        col_fft.process(&mut col);
        for (y, c) in col.iter().enumerate() {
            data[y * w + x] = *c;
        }
    }
}

/// Unit-variance pink-noise field of the given size. The spectral amplitude
/// falls as `1 / frequency`; the spatial mean is (numerically) zero.
pub fn pink_noise_field(width: u32, height: u32, rng: &RngStream) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let (w, h) = (width as usize, height as usize);
    let mut r = rng.rng();
    let normal = StandardNormal;
    let mut spectrum = vec![Complex::new(0.0, 0.0); w * h];
    for ky in 0..h {
        let fy = bin_frequency(ky, h);
        for kx in 0..w {
            let re: f64 = normal.sample(&mut r);
            let im: f64 = normal.sample(&mut r);
            let fx = bin_frequency(kx, w);
            let norm = (fy * fy + fx * fx).sqrt();
            spectrum[ky * w + kx] = if norm > 0.0 {
                Complex::new(re / norm, im / norm)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
    }
    fft2(&mut spectrum, w, h, true);
    let mut field: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        let inv_std = 1.0 / var.sqrt();
        for v in &mut field {
            *v = (*v - mean) * inv_std;
        }
    }
    field
}

/// Adds pink noise with amplitude `1 / factor` to every channel; a larger
/// divisor means weaker noise.
pub fn apply_fnoise(img: &RealImage, factor: f64, rng: &RngStream) -> Result<RealImage> {
    if !(factor > 0.0) {
        return Err(Error::Param(format!("fnoise factor {factor} must be > 0")));
    }
    let field = pink_noise_field(img.width(), img.height(), rng);
    let amplitude = 1.0 / factor;
    let ch = img.channels() as usize;
    let mut out = img.clone();
    for (pixel, f) in out.data_mut().chunks_exact_mut(ch).zip(field.iter()) {
        for v in pixel {
            *v = (*v + amplitude * f).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Least-squares slope of the log radially-averaged power spectrum of a
/// field against log frequency. Pink fields sit near -2 (power goes as
/// amplitude squared).
pub fn radial_log_power_slope(field: &[f64], width: u32, height: u32) -> f64 {
    let (w, h) = (width as usize, height as usize);
    assert_eq!(field.len(), w * h);
    let mut data: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut data, w, h, false);

    // Log-spaced annuli between the lowest resolvable frequency and Nyquist.
    let bins = 16;
    let f_min = 2.0 / w.min(h) as f64;
    let f_max = 0.5;
    let log_step = (f_max / f_min).ln() / bins as f64;
    let mut power = vec![0.0f64; bins];
    let mut freq = vec![0.0f64; bins];
    let mut count = vec![0u64; bins];
    for ky in 0..h {
        let fy = bin_frequency(ky, h);
        for kx in 0..w {
            let fx = bin_frequency(kx, w);
            let f = (fy * fy + fx * fx).sqrt();
            if f < f_min || f > f_max {
                continue;
            }
            let b = (((f / f_min).ln() / log_step) as usize).min(bins - 1);
            power[b] += data[ky * w + kx].norm_sqr();
            freq[b] += f.ln();
            count[b] += 1;
        }
    }
    let points: Vec<(f64, f64)> = (0..bins)
        .filter(|&b| count[b] > 0 && power[b] > 0.0)
        .map(|b| {
            (
                freq[b] / count[b] as f64,
                (power[b] / count[b] as f64).ln(),
            )
        })
        .collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
