//! The eight distortion operators, their level grids, and region-restricted
//! application.
//!
//! Every operator maps a normalized image to a normalized image and is a
//! pure function of `(input, parameters, rng stream)`. Operators that need
//! randomness take an explicit [`RngStream`]; the rest ignore it.

mod blur;
mod fnoise;
mod jpeg;
mod nlm;

pub use blur::apply_gaussian_blur;
pub use fnoise::{apply_fnoise, pink_noise_field, radial_log_power_slope};
pub use jpeg::apply_jpeg;
pub use nlm::{apply_nlm_denoise, DEFAULT_PATCH_DISTANCE, DEFAULT_PATCH_SIZE};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RealImage, Rect};
use crate::rng::RngStream;

/// Distortion classes, plus the `Pristine` background class used by the
/// detection task. Integer codes are stable: 0..=7 for the distortions in
/// declaration order, 8 for `Pristine`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionClass {
    Gwn,
    GaussianBlur,
    SaltPepper,
    Quantization,
    Jpeg,
    #[serde(rename = "lowpass")]
    LowPass,
    Denoise,
    #[serde(rename = "fnoise")]
    FNoise,
    Pristine,
}

/// The eight distortion classes, in code order.
pub const DISTORTION_CLASSES: [DistortionClass; 8] = [
    DistortionClass::Gwn,
    DistortionClass::GaussianBlur,
    DistortionClass::SaltPepper,
    DistortionClass::Quantization,
    DistortionClass::Jpeg,
    DistortionClass::LowPass,
    DistortionClass::Denoise,
    DistortionClass::FNoise,
];

/// All nine classes including `Pristine`, in code order.
pub const ALL_CLASSES: [DistortionClass; 9] = [
    DistortionClass::Gwn,
    DistortionClass::GaussianBlur,
    DistortionClass::SaltPepper,
    DistortionClass::Quantization,
    DistortionClass::Jpeg,
    DistortionClass::LowPass,
    DistortionClass::Denoise,
    DistortionClass::FNoise,
    DistortionClass::Pristine,
];

impl DistortionClass {
    /// Stable integer code, 0..=8.
    pub fn code(&self) -> u32 {
        ALL_CLASSES.iter().position(|c| c == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<DistortionClass> {
        ALL_CLASSES.get(code as usize).copied()
    }

    /// Short stable name, matching the manifest encoding.
    pub fn name(&self) -> &'static str {
        match self {
            DistortionClass::Gwn => "gwn",
            DistortionClass::GaussianBlur => "gaussian_blur",
            DistortionClass::SaltPepper => "salt_pepper",
            DistortionClass::Quantization => "quantization",
            DistortionClass::Jpeg => "jpeg",
            DistortionClass::LowPass => "lowpass",
            DistortionClass::Denoise => "denoise",
            DistortionClass::FNoise => "fnoise",
            DistortionClass::Pristine => "pristine",
        }
    }
}

impl std::fmt::Display for DistortionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DistortionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_CLASSES
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown distortion class '{s}'")))
    }
}

/// The three severity levels of one class plus its legal continuous range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGrid {
    /// Grid values in published order (severity-ascending except fnoise,
    /// where a larger divisor means weaker noise).
    pub levels: [f64; 3],
    pub min: f64,
    pub max: f64,
    /// True when the parameter is integer-valued (JPEG quality,
    /// quantization level count).
    pub integer: bool,
}

/// Per-class severity grid and legal parameter range.
pub fn level_grid(class: DistortionClass) -> Result<LevelGrid> {
    let (levels, integer) = match class {
        DistortionClass::Gwn => ([0.0125, 0.025, 0.05], false),
        DistortionClass::GaussianBlur => ([1.5, 3.0, 6.0], false),
        DistortionClass::SaltPepper => ([0.0125, 0.025, 0.05], false),
        DistortionClass::Quantization => ([16.0, 8.0, 4.0], true),
        DistortionClass::Jpeg => ([20.0, 10.0, 5.0], true),
        DistortionClass::LowPass => ([0.3, 0.1, 0.03], false),
        DistortionClass::Denoise => ([0.04, 0.06, 0.08], false),
        DistortionClass::FNoise => ([2.5, 5.0, 10.0], false),
        DistortionClass::Pristine => {
            return Err(Error::Param("pristine has no severity grid".into()))
        }
    };
    let min = levels.iter().copied().fold(f64::INFINITY, f64::min);
    let max = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LevelGrid {
        levels,
        min,
        max,
        integer,
    })
}

/// A distortion class with one severity parameter (variance, sigma, amount,
/// level count, quality, ratio, h, or divisor, depending on the class).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub class: DistortionClass,
    pub param: f64,
}

impl DistortionSpec {
    /// Builds a spec, validating the parameter against the class's legal
    /// range from [`level_grid`].
    pub fn new(class: DistortionClass, param: f64) -> Result<DistortionSpec> {
        if class == DistortionClass::Pristine {
            return Err(Error::Param("pristine takes no parameter".into()));
        }
        let grid = level_grid(class)?;
        if !param.is_finite() || param < grid.min || param > grid.max {
            return Err(Error::Param(format!(
                "{class} parameter {param} outside [{}, {}]",
                grid.min, grid.max
            )));
        }
        if grid.integer && param.fract() != 0.0 {
            return Err(Error::Param(format!(
                "{class} parameter {param} must be an integer"
            )));
        }
        Ok(DistortionSpec { class, param })
    }

    /// Spec at grid level 0, 1, or 2 (severity index).
    pub fn at_level(class: DistortionClass, level_index: usize) -> Result<DistortionSpec> {
        let grid = level_grid(class)?;
        let param = *grid.levels.get(level_index).ok_or_else(|| {
            Error::Param(format!("level index {level_index} outside 0..3"))
        })?;
        Ok(DistortionSpec { class, param })
    }

    /// The background spec. Its parameter is unused.
    pub fn pristine() -> DistortionSpec {
        DistortionSpec {
            class: DistortionClass::Pristine,
            param: 0.0,
        }
    }
}

/// Additive i.i.d. Gaussian noise with the given variance, clamped to [0, 1].
pub fn apply_gwn(img: &RealImage, variance: f64, rng: &RngStream) -> Result<RealImage> {
    if !(variance > 0.0) {
        return Err(Error::Param(format!("gwn variance {variance} must be > 0")));
    }
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::Param(format!("gwn variance {variance}: {e}")))?;
    let mut r = rng.rng();
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut r)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Salt-and-pepper impulse noise. Each pixel is corrupted independently with
/// probability `amount`; a corrupted pixel is set to 1 or 0 (equal odds)
/// across all of its channels.
pub fn apply_salt_pepper(img: &RealImage, amount: f64, rng: &RngStream) -> Result<RealImage> {
    if !(amount > 0.0 && amount <= 1.0) {
        return Err(Error::Param(format!(
            "salt/pepper amount {amount} outside (0, 1]"
        )));
    }
    let mut r = rng.rng();
    let mut out = img.clone();
    let ch = out.channels() as usize;
    for pixel in out.data_mut().chunks_exact_mut(ch) {
        if r.random::<f64>() < amount {
            let value = if r.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            pixel.fill(value);
        }
    }
    Ok(out)
}

/// Uniform quantization to `levels` values per channel:
/// `round(x * (levels - 1)) / (levels - 1)`.
pub fn apply_quantization(img: &RealImage, levels: u32) -> Result<RealImage> {
    if levels < 2 {
        return Err(Error::Param(format!("quantization levels {levels} < 2")));
    }
    let steps = (levels - 1) as f64;
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v * steps).round() / steps;
    }
    Ok(out)
}

/// Low-pass degradation: bilinear shrink by `ratio` then bilinear expand
/// back to the original size.
pub fn apply_lowpass(img: &RealImage, ratio: f64) -> Result<RealImage> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Param(format!("lowpass ratio {ratio} outside (0, 1)")));
    }
    let min_dim = img.width().min(img.height()) as f64;
    if (ratio * min_dim).floor() < 1.0 {
        return Err(Error::Param(format!(
            "lowpass ratio {ratio} degenerates a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let dw = ((img.width() as f64 * ratio).round() as u32).max(1);
    let dh = ((img.height() as f64 * ratio).round() as u32).max(1);
    let small = crate::resize::resize_bilinear(img, dw, dh)?;
    crate::resize::resize_bilinear(&small, img.width(), img.height())
}

/// Applies one distortion spec to a whole image. `Pristine` is the identity.
pub fn apply(img: &RealImage, spec: &DistortionSpec, rng: &RngStream) -> Result<RealImage> {
    match spec.class {
        DistortionClass::Gwn => apply_gwn(img, spec.param, rng),
        DistortionClass::GaussianBlur => apply_gaussian_blur(img, spec.param),
        DistortionClass::SaltPepper => apply_salt_pepper(img, spec.param, rng),
        DistortionClass::Quantization => apply_quantization(img, spec.param.round() as u32),
        DistortionClass::Jpeg => apply_jpeg(img, spec.param.round() as u32),
        DistortionClass::LowPass => apply_lowpass(img, spec.param),
        DistortionClass::Denoise => {
            apply_nlm_denoise(img, spec.param, DEFAULT_PATCH_SIZE, DEFAULT_PATCH_DISTANCE)
        }
        DistortionClass::FNoise => apply_fnoise(img, spec.param, rng),
        DistortionClass::Pristine => Ok(img.clone()),
    }
}

/// Applies a distortion inside `rect` only. The distortion operates on the
/// cropped sub-image, so spatial operators never read context across the
/// rect boundary, and every pixel outside the rect is untouched bit-exactly.
pub fn apply_region(
    img: &RealImage,
    rect: Rect,
    spec: &DistortionSpec,
    rng: &RngStream,
) -> Result<RealImage> {
    let sub = img.crop(rect)?;
    let distorted = apply(&sub, spec, rng)?;
    let mut out = img.clone();
    out.paste(rect, &distorted)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn const_image(v: f64) -> RealImage {
        RealImage::filled(64, 64, 3, v).unwrap()
    }

    #[test]
    fn class_codes_are_stable() {
        assert_eq!(DistortionClass::Gwn.code(), 0);
        assert_eq!(DistortionClass::FNoise.code(), 7);
        assert_eq!(DistortionClass::Pristine.code(), 8);
        for (i, c) in ALL_CLASSES.iter().enumerate() {
            assert_eq!(DistortionClass::from_code(i as u32), Some(*c));
            assert_eq!(c.name().parse::<DistortionClass>().unwrap(), *c);
        }
    }

    #[test]
    fn grids_match_published_values() {
        assert_eq!(
            level_grid(DistortionClass::Gwn).unwrap().levels,
            [0.0125, 0.025, 0.05]
        );
        assert_eq!(
            level_grid(DistortionClass::SaltPepper).unwrap().levels,
            [0.0125, 0.025, 0.05]
        );
        assert_eq!(
            level_grid(DistortionClass::GaussianBlur).unwrap().levels,
            [1.5, 3.0, 6.0]
        );
        // Severity-ascending means quality-descending for JPEG.
        assert_eq!(
            level_grid(DistortionClass::Jpeg).unwrap().levels,
            [20.0, 10.0, 5.0]
        );
        assert_eq!(
            level_grid(DistortionClass::LowPass).unwrap().levels,
            [0.3, 0.1, 0.03]
        );
        assert_eq!(
            level_grid(DistortionClass::Denoise).unwrap().levels,
            [0.04, 0.06, 0.08]
        );
        assert_eq!(
            level_grid(DistortionClass::FNoise).unwrap().levels,
            [2.5, 5.0, 10.0]
        );
        assert_eq!(
            level_grid(DistortionClass::Quantization).unwrap().levels,
            [16.0, 8.0, 4.0]
        );
        let jpeg = level_grid(DistortionClass::Jpeg).unwrap();
        assert_eq!((jpeg.min, jpeg.max), (5.0, 20.0));
        assert!(level_grid(DistortionClass::Pristine).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(DistortionSpec::new(DistortionClass::Gwn, 0.03).is_ok());
        assert!(DistortionSpec::new(DistortionClass::Gwn, 0.2).is_err());
        assert!(DistortionSpec::new(DistortionClass::Jpeg, 12.5).is_err());
        assert!(DistortionSpec::new(DistortionClass::Jpeg, 12.0).is_ok());
        assert!(DistortionSpec::new(DistortionClass::Pristine, 0.0).is_err());
    }

    #[test]
    fn gwn_zero_limit_and_clamp_asymmetry() {
        let img = const_image(0.0);
        let rng = RngStream::new(3, 0);
        let tiny = apply_gwn(&img, 1e-12, &rng).unwrap();
        assert!(tiny.data().iter().all(|&v| v.abs() < 1e-5));
        let noisy = apply_gwn(&img, 0.05, &rng).unwrap();
        let mean = noisy.data().iter().sum::<f64>() / noisy.data().len() as f64;
        assert!(mean > 0.0, "one-sided clipping should lift the mean");
        assert!(apply_gwn(&img, 0.0, &rng).is_err());
    }

    #[test]
    fn salt_pepper_saturation() {
        let img = const_image(0.5);
        let out = apply_salt_pepper(&img, 1.0, &RngStream::new(5, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
        // Whole-pixel corruption: channels agree.
        for px in out.data().chunks_exact(3) {
            assert!(px.iter().all(|&v| v == px[0]));
        }
        assert!(apply_salt_pepper(&img, 0.0, &RngStream::new(5, 1)).is_err());
        assert!(apply_salt_pepper(&img, 1.5, &RngStream::new(5, 1)).is_err());
    }

    #[test]
    fn quantization_basics() {
        let img = const_image(0.4);
        let two = apply_quantization(&img, 2).unwrap();
        assert!(two.data().iter().all(|&v| v == 0.0));
        assert!(apply_quantization(&img, 1).is_err());

        // levels = 256 is the identity for any 8-bit-originated image.
        let bytes: Vec<u8> = (0..64u32 * 64 * 3).map(|i| (i % 256) as u8).collect();
        let img = crate::image::ByteImage::new(64, 64, 3, bytes).unwrap().to_real();
        let out = apply_quantization(&img, 256).unwrap();
        assert_eq!(out.to_bytes(), img.to_bytes());

        // At most `levels` distinct values per channel.
        let out = apply_quantization(&img, 4).unwrap();
        let mut values: Vec<u64> = out.data().iter().map(|v| v.to_bits()).collect();
        values.sort_unstable();
        values.dedup();
        assert!(values.len() <= 4);
    }

    #[test]
    fn lowpass_constant_and_degenerate() {
        let img = const_image(0.7);
        let out = apply_lowpass(&img, 0.3).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-9));
        // 64 * 0.01 < 1: degenerate.
        assert!(apply_lowpass(&img, 0.01).is_err());
    }

    #[test]
    fn lowpass_removes_energy_monotonically() {
        // High-frequency checkerboard collapses under a strong low-pass.
        let checker = Image::new(
            64,
            64,
            1,
            (0..64 * 64)
                .map(|i| (((i / 64) + (i % 64)) % 2) as f64)
                .collect(),
        )
        .unwrap();
        let variance = |im: &RealImage| {
            let n = im.data().len() as f64;
            let mean = im.data().iter().sum::<f64>() / n;
            im.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        };
        let strong = apply_lowpass(&checker, 0.03).unwrap();
        assert!(variance(&strong) < 0.1 * variance(&checker));

        // Monotonicity on a mixed-frequency fixture (a pure checkerboard
        // aliases identically at several scales).
        let textured = Image::new(
            64,
            64,
            1,
            (0..64 * 64)
                .map(|i| {
                    let (x, y) = ((i % 64) as f64, (i / 64) as f64);
                    0.5 + 0.2 * (0.35 * x).sin() * (0.3 * y).sin()
                        + 0.15 * (2.2 * x + 1.1 * y).sin()
                        + 0.1 * (x / 63.0 - 0.5)
                })
                .collect(),
        )
        .unwrap();
        let mse = |a: &RealImage, b: &RealImage| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                / a.data().len() as f64
        };
        let strong = apply_lowpass(&textured, 0.03).unwrap();
        let weak = apply_lowpass(&textured, 0.3).unwrap();
        assert!(mse(&strong, &textured) > mse(&weak, &textured));
    }

    #[test]
    fn apply_dispatch_and_determinism() {
        let img = const_image(0.5);
        let rng = RngStream::new(77, 3);
        let spec = DistortionSpec::new(DistortionClass::Gwn, 0.05).unwrap();
        let a = apply(&img, &spec, &rng).unwrap();
        let b = apply_gwn(&img, 0.05, &rng).unwrap();
        assert_eq!(a, b);
        let c = apply(&img, &spec, &rng).unwrap();
        assert_eq!(a, c);
        let id = apply(&img, &DistortionSpec::pristine(), &rng).unwrap();
        assert_eq!(id, img);
    }

    #[test]
    fn apply_region_locality() {
        use rand::Rng;
        let mut r = RngStream::new(2, 2).rng();
        let data: Vec<f64> = (0..48 * 40 * 3).map(|_| r.random::<f64>()).collect();
        let img = RealImage::new(48, 40, 3, data).unwrap();
        let rect = Rect::new(8, 4, 16, 24).unwrap();
        let spec = DistortionSpec::new(DistortionClass::Gwn, 0.05).unwrap();
        let rng = RngStream::new(9, 4);
        let out = apply_region(&img, rect, &spec, &rng).unwrap();
        for y in 0..40 {
            for x in 0..48 {
                if !rect.contains_point(x, y) {
                    for c in 0..3 {
                        assert_eq!(out.get(x, y, c).to_bits(), img.get(x, y, c).to_bits());
                    }
                }
            }
        }
        // Full-frame rect is plain apply.
        let full = Rect::new(0, 0, 48, 40).unwrap();
        assert_eq!(
            apply_region(&img, full, &spec, &rng).unwrap(),
            apply(&img, &spec, &rng).unwrap()
        );
        // Out-of-bounds rect errors.
        assert!(apply_region(&img, Rect::new(40, 0, 16, 8).unwrap(), &spec, &rng).is_err());
    }

    #[test]
    fn disjoint_regions_commute() {
        let img = const_image(0.5);
        let r1 = Rect::new(0, 0, 16, 16).unwrap();
        let r2 = Rect::new(32, 32, 16, 16).unwrap();
        let s1 = DistortionSpec::new(DistortionClass::Gwn, 0.05).unwrap();
        let s2 = DistortionSpec::new(DistortionClass::SaltPepper, 0.05).unwrap();
        let rng1 = RngStream::new(1, 10);
        let rng2 = RngStream::new(1, 11);
        let ab = apply_region(&apply_region(&img, r1, &s1, &rng1).unwrap(), r2, &s2, &rng2).unwrap();
        let ba = apply_region(&apply_region(&img, r2, &s2, &rng2).unwrap(), r1, &s1, &rng1).unwrap();
        assert_eq!(ab, ba);
    }
}
