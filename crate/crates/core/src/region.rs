//! Region sampling for the detection task: how many regions, where, how
//! big, which distortion, which severity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distort::{self, level_grid, DistortionClass, DistortionSpec, DISTORTION_CLASSES};
use crate::error::{Error, Result};
use crate::image::{ByteImage, Rect};
use crate::rng::RngStream;

/// Detection dataset flavor: few large regions vs. many small ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Basic,
    Difficult,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Basic => "basic",
            Variant::Difficult => "difficult",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "difficult" => Ok(Variant::Difficult),
            other => Err(Error::Param(format!("unknown variant '{other}'"))),
        }
    }
}

/// Sampling law for the regions of one detection image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionConfig {
    pub count_min: u32,
    pub count_max: u32,
    /// Linear size ratios per axis, sampled independently for width and
    /// height.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Square working size in pixels.
    pub image_size: u32,
    /// Placement attempts per drawn size before the size is redrawn.
    pub max_rejection_attempts: u32,
}

impl RegionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count_min < 1 || self.count_min > self.count_max {
            return Err(Error::Param(format!(
                "region counts [{}, {}] invalid",
                self.count_min, self.count_max
            )));
        }
        if !(self.ratio_min > 0.0 && self.ratio_min <= self.ratio_max && self.ratio_max <= 1.0) {
            return Err(Error::Param(format!(
                "size ratios [{}, {}] invalid",
                self.ratio_min, self.ratio_max
            )));
        }
        Ok(())
    }
}

/// Preset configurations: basic draws 1..=4 regions with linear ratios in
/// [0.3, 0.7]; difficult draws 5..=9 regions with ratios in [0.1, 0.3].
/// Both work on 300 x 300 images.
pub fn preset(variant: Variant) -> RegionConfig {
    match variant {
        Variant::Basic => RegionConfig {
            count_min: 1,
            count_max: 4,
            ratio_min: 0.3,
            ratio_max: 0.7,
            image_size: 300,
            max_rejection_attempts: 100,
        },
        Variant::Difficult => RegionConfig {
            count_min: 5,
            count_max: 9,
            ratio_min: 0.1,
            ratio_max: 0.3,
            image_size: 300,
            max_rejection_attempts: 100,
        },
    }
}

/// One labeled region: where, and which distortion at which severity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionAnnotation {
    pub rect: Rect,
    pub spec: DistortionSpec,
}

/// Output of [`sample_regions`]: the placed rects plus how many regions had
/// to be given up after exhausting placement attempts.
#[derive(Debug, Clone)]
pub struct RegionSample {
    pub rects: Vec<Rect>,
    pub dropped: u32,
}

// Sizes redrawn up to this many times inside one layout attempt; whole
// layouts restart up to this many times before the count drops by one.
const SIZE_REDRAWS: u32 = 20;
const LAYOUT_RESTARTS: u32 = 200;

/// Number of in-bounds positions for a `w x h` rect disjoint from every
/// placed rect, and the `index`-th such position in row-major order when
/// `index` is given. Computed exactly by subtracting each placed rect's
/// forbidden position box from the position domain, row by row.
fn feasible_positions(
    placed: &[Rect],
    w: u32,
    h: u32,
    size: u32,
    index: Option<u64>,
) -> (u64, Option<(u32, u32)>) {
    let x_max = (size - w) as i64;
    let y_max = (size - h) as i64;
    // Per placed rect, the (inclusive) box of positions that would overlap.
    let zones: Vec<(i64, i64, i64, i64)> = placed
        .iter()
        .map(|r| {
            (
                r.y as i64 - h as i64 + 1,
                r.bottom() as i64 - 1,
                r.x as i64 - w as i64 + 1,
                r.right() as i64 - 1,
            )
        })
        .collect();
    let mut total = 0u64;
    let mut remaining = index;
    for y in 0..=y_max {
        let mut intervals: Vec<(i64, i64)> = zones
            .iter()
            .filter(|&&(y0, y1, _, _)| y >= y0 && y <= y1)
            .map(|&(_, _, x0, x1)| (x0.max(0), x1.min(x_max)))
            .filter(|&(x0, x1)| x0 <= x1)
            .collect();
        intervals.sort_unstable();
        // Walk the complement of the merged forbidden intervals.
        let mut cursor = 0i64;
        let mut row_allowed: Vec<(i64, i64)> = Vec::new();
        for (x0, x1) in intervals {
            if x0 > cursor {
                row_allowed.push((cursor, x0 - 1));
            }
            cursor = cursor.max(x1 + 1);
        }
        if cursor <= x_max {
            row_allowed.push((cursor, x_max));
        }
        for (a, b) in row_allowed {
            let n = (b - a + 1) as u64;
            if let Some(rem) = remaining {
                if rem < total + n {
                    return (0, Some(((a + (rem - total) as i64) as u32, y as u32)));
                }
            }
            total += n;
        }
    }
    (total, None)
}

/// One attempt at placing `count` disjoint rects. Per rect: draw a size,
/// try plain rejection for `max_rejection_attempts`, then sample uniformly
/// from the exact feasible set (the same conditional law rejection
/// converges to); sizes with an empty feasible set are redrawn. `None`
/// when some rect never fits.
fn try_layout(
    cfg: &RegionConfig,
    count: u32,
    r: &mut rand_chacha::ChaCha8Rng,
) -> Result<Option<Vec<Rect>>> {
    let size = cfg.image_size;
    let mut rects: Vec<Rect> = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut placed = false;
        'size: for _ in 0..SIZE_REDRAWS {
            let w = ((r.random_range(cfg.ratio_min..=cfg.ratio_max) * size as f64).round()
                as u32)
                .clamp(1, size);
            let h = ((r.random_range(cfg.ratio_min..=cfg.ratio_max) * size as f64).round()
                as u32)
                .clamp(1, size);
            for _ in 0..cfg.max_rejection_attempts {
                let x = r.random_range(0..=size - w);
                let y = r.random_range(0..=size - h);
                let candidate = Rect::new(x, y, w, h)?;
                if rects.iter().all(|r| r.intersection_area(&candidate) == 0) {
                    rects.push(candidate);
                    placed = true;
                    break 'size;
                }
            }
            let (feasible, _) = feasible_positions(&rects, w, h, size, None);
            if feasible > 0 {
                let pick = r.random_range(0..feasible);
                let (_, position) = feasible_positions(&rects, w, h, size, Some(pick));
                let (x, y) = position.expect("index within feasible count");
                rects.push(Rect::new(x, y, w, h)?);
                placed = true;
                break 'size;
            }
        }
        if !placed {
            return Ok(None);
        }
    }
    Ok(Some(rects))
}

/// Samples pairwise non-overlapping regions. The count is uniform on
/// `[count_min, count_max]`; each rect's width and height ratios are drawn
/// independently and uniformly from `[ratio_min, ratio_max]`; positions are
/// uniform over in-bounds non-overlapping placements. A layout that cannot
/// accommodate its drawn sizes is restarted with fresh draws (which is what
/// pushes realized sizes below the range midpoint); only when placement
/// keeps failing does the region count drop by one, and never below 1.
pub fn sample_regions(cfg: &RegionConfig, rng: &RngStream) -> Result<RegionSample> {
    cfg.validate()?;
    let mut r = rng.rng();
    let target = r.random_range(cfg.count_min..=cfg.count_max);
    let mut count = target;
    loop {
        for _ in 0..LAYOUT_RESTARTS {
            if let Some(rects) = try_layout(cfg, count, &mut r)? {
                return Ok(RegionSample {
                    rects,
                    dropped: target - count,
                });
            }
        }
        if count <= 1 {
            // Give up entirely: the smallest legal rect at the origin
            // (reachable only under pathological configs).
            let w = ((cfg.ratio_min * cfg.image_size as f64).round() as u32)
                .clamp(1, cfg.image_size);
            return Ok(RegionSample {
                rects: vec![Rect::new(0, 0, w, w)?],
                dropped: target - 1,
            });
        }
        count -= 1;
    }
}

/// Draws a severity parameter uniformly over the class's continuous range;
/// integer-valued parameters (JPEG quality, quantization levels) are
/// rounded to the nearest integer.
pub fn sample_level(class: DistortionClass, rng: &RngStream) -> Result<DistortionSpec> {
    let grid = level_grid(class)?;
    let mut r = rng.rng();
    let mut param = r.random_range(grid.min..=grid.max);
    if grid.integer {
        param = param.round();
    }
    DistortionSpec::new(class, param)
}

/// Synthesizes one detection image: center-crops the reference to the
/// working size, samples a region layout, and applies an independently
/// drawn distortion class and severity inside each region. Pixels outside
/// the regions are the cropped reference, bit-exact.
pub fn synthesize_detection_image(
    reference: &ByteImage,
    cfg: &RegionConfig,
    rng: &RngStream,
) -> Result<(ByteImage, Vec<RegionAnnotation>)> {
    if reference.width() < cfg.image_size || reference.height() < cfg.image_size {
        return Err(Error::Geometry(format!(
            "reference {}x{} smaller than working size {}",
            reference.width(),
            reference.height(),
            cfg.image_size
        )));
    }
    let cropped = reference.center_crop(cfg.image_size, cfg.image_size)?;
    let mut working = cropped.to_real();
    let layout = sample_regions(cfg, &rng.derive(0))?;
    let mut annotations = Vec::with_capacity(layout.rects.len());
    for (k, &rect) in layout.rects.iter().enumerate() {
        let region_rng = rng.derive(1 + k as u64);
        let class = DISTORTION_CLASSES[region_rng.rng().random_range(0..DISTORTION_CLASSES.len())];
        let spec = sample_level(class, &region_rng.derive(1))?;
        working = distort::apply_region(&working, rect, &spec, &region_rng.derive(2))?;
        annotations.push(RegionAnnotation { rect, spec });
    }
    Ok((working.to_bytes(), annotations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_protocol() {
        let basic = preset(Variant::Basic);
        assert_eq!((basic.count_min, basic.count_max), (1, 4));
        assert_eq!((basic.ratio_min, basic.ratio_max), (0.3, 0.7));
        let difficult = preset(Variant::Difficult);
        assert_eq!((difficult.count_min, difficult.count_max), (5, 9));
        assert_eq!((difficult.ratio_min, difficult.ratio_max), (0.1, 0.3));
        assert_eq!(basic.image_size, 300);
        assert_eq!(difficult.image_size, 300);
    }

    #[test]
    fn basic_sample_ranges_and_non_overlap() {
        let cfg = preset(Variant::Basic);
        let sample = sample_regions(&cfg, &RngStream::new(7, 0)).unwrap();
        assert!(matches!(sample.rects.len(), 1..=4));
        assert_eq!(sample.dropped, 0);
        for rect in &sample.rects {
            assert!((90..=210).contains(&rect.w), "w {} out of range", rect.w);
            assert!((90..=210).contains(&rect.h), "h {} out of range", rect.h);
            assert!(rect.fits_within(300, 300));
        }
        for (i, a) in sample.rects.iter().enumerate() {
            for b in &sample.rects[i + 1..] {
                assert_eq!(a.intersection_area(b), 0);
            }
        }
    }

    #[test]
    fn difficult_counts_stay_within_bounds() {
        let cfg = preset(Variant::Difficult);
        for seed in 0..50 {
            let sample = sample_regions(&cfg, &RngStream::new(seed, 1)).unwrap();
            let n = sample.rects.len() as u32 + sample.dropped;
            assert!((5..=9).contains(&n));
            for (i, a) in sample.rects.iter().enumerate() {
                for b in &sample.rects[i + 1..] {
                    assert_eq!(a.intersection_area(b), 0);
                }
            }
        }
    }

    #[test]
    fn level_sampling_obeys_ranges() {
        let rng = RngStream::new(3, 2);
        for i in 0..100 {
            let spec = sample_level(DistortionClass::Gwn, &rng.derive(i)).unwrap();
            assert!((0.0125..=0.05).contains(&spec.param));
            let spec = sample_level(DistortionClass::Jpeg, &rng.derive(1000 + i)).unwrap();
            assert_eq!(spec.param.fract(), 0.0);
            assert!((5.0..=20.0).contains(&spec.param));
        }
        assert!(sample_level(DistortionClass::Pristine, &rng).is_err());
    }

    #[test]
    fn synthesis_is_deterministic_and_local() {
        let reference = crate::synth::synthetic_reference(320, 320, &RngStream::new(5, 5));
        let cfg = preset(Variant::Basic);
        let rng = RngStream::new(42, 9);
        let (img_a, ann_a) = synthesize_detection_image(&reference, &cfg, &rng).unwrap();
        let (img_b, ann_b) = synthesize_detection_image(&reference, &cfg, &rng).unwrap();
        assert_eq!(img_a, img_b);
        assert_eq!(ann_a.len(), ann_b.len());
        for (a, b) in ann_a.iter().zip(&ann_b) {
            assert_eq!(a.rect, b.rect);
            assert_eq!(a.spec, b.spec);
        }
        // Outside the union of rects the image equals the center crop.
        let cropped = reference.center_crop(300, 300).unwrap();
        for y in 0..300 {
            for x in 0..300 {
                if ann_a.iter().any(|a| a.rect.contains_point(x, y)) {
                    continue;
                }
                for c in 0..3 {
                    assert_eq!(img_a.get(x, y, c), cropped.get(x, y, c));
                }
            }
        }
        for ann in &ann_a {
            assert!(ann.rect.fits_within(300, 300));
            assert_ne!(ann.spec.class, DistortionClass::Pristine);
        }
        // Too-small reference errors.
        let small = crate::synth::synthetic_reference(200, 320, &RngStream::new(5, 6));
        assert!(synthesize_detection_image(&small, &cfg, &rng).is_err());
    }
}
