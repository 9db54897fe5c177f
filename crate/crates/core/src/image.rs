//! Raster images and axis-aligned pixel rectangles.
//!
//! Images exist in two explicit forms: 8-bit integer storage ([`ByteImage`])
//! and normalized real working form in `[0, 1]` ([`RealImage`]). All
//! distortion arithmetic runs on the real form; files and datasets hold the
//! integer form. Conversions are explicit and the integer → real → integer
//! round trip is the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major raster with interleaved channels (1 = grayscale, 3 = RGB).
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<T>,
}

/// 8-bit integer storage form; every sample in `[0, 255]`.
pub type ByteImage = Image<u8>;

/// Normalized real working form; every sample in `[0, 1]`.
pub type RealImage = Image<f64>;

impl<T: Copy> Image<T> {
    /// Wraps raw row-major samples. `data.len()` must equal
    /// `width * height * channels` and `channels` must be 1 or 3.
    pub fn new(width: u32, height: u32, channels: u32, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "zero-dimension image {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Geometry(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::Geometry(format!(
                "sample buffer has {} entries, expected {}",
                data.len(),
                expected
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Image filled with a single value.
    pub fn filled(width: u32, height: u32, channels: u32, value: T) -> Result<Self> {
        let len = width as usize * height as usize * channels as usize;
        Image::new(width, height, channels, vec![value; len])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat index of sample (x, y, c).
    #[inline]
    pub fn index(&self, x: u32, y: u32, c: u32) -> usize {
        ((y as usize * self.width as usize) + x as usize) * self.channels as usize + c as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u32) -> T {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u32, value: T) {
        let i = self.index(x, y, c);
        self.data[i] = value;
    }

    /// Copies the samples under `rect` into a new image.
    pub fn crop(&self, rect: Rect) -> Result<Image<T>> {
        if !rect.fits_within(self.width, self.height) {
            return Err(Error::Geometry(format!(
                "rect {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let ch = self.channels as usize;
        let mut data = Vec::with_capacity(rect.w as usize * rect.h as usize * ch);
        for y in rect.y..rect.bottom() {
            let start = self.index(rect.x, y, 0);
            let end = start + rect.w as usize * ch;
            data.extend_from_slice(&self.data[start..end]);
        }
        Image::new(rect.w, rect.h, self.channels, data)
    }

    /// Writes `patch` over the samples under `rect`; everything outside the
    /// rect is untouched.
    pub fn paste(&mut self, rect: Rect, patch: &Image<T>) -> Result<()> {
        if !rect.fits_within(self.width, self.height) {
            return Err(Error::Geometry(format!(
                "rect {rect:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        if patch.width != rect.w || patch.height != rect.h || patch.channels != self.channels {
            return Err(Error::Geometry(format!(
                "patch {}x{}x{} does not match rect {rect:?} on {} channels",
                patch.width, patch.height, patch.channels, self.channels
            )));
        }
        let ch = self.channels as usize;
        let row = rect.w as usize * ch;
        for (dy, y) in (rect.y..rect.bottom()).enumerate() {
            let dst = self.index(rect.x, y, 0);
            let src = dy * row;
            self.data[dst..dst + row].copy_from_slice(&patch.data[src..src + row]);
        }
        Ok(())
    }

    /// Central `out_w` x `out_h` crop; offset is `floor((dim - out) / 2)`.
    pub fn center_crop(&self, out_w: u32, out_h: u32) -> Result<Image<T>> {
        if out_w == 0 || out_h == 0 || out_w > self.width || out_h > self.height {
            return Err(Error::Geometry(format!(
                "cannot crop {}x{} out of {}x{}",
                out_w, out_h, self.width, self.height
            )));
        }
        let x = (self.width - out_w) / 2;
        let y = (self.height - out_h) / 2;
        self.crop(Rect::new(x, y, out_w, out_h)?)
    }

    /// Mirrors columns: column `j` maps to column `width - 1 - j`.
    pub fn horizontal_flip(&self) -> Image<T> {
        let ch = self.channels as usize;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = self.index(x, y, 0);
                data.extend_from_slice(&self.data[i..i + ch]);
            }
        }
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

impl ByteImage {
    /// Integer storage form to normalized real form (divide by 255).
    pub fn to_real(&self) -> RealImage {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }
}

impl RealImage {
    /// Real form to integer storage form: scale by 255, round half away
    /// from zero, clamp to `[0, 255]`.
    pub fn to_bytes(&self) -> ByteImage {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        }
    }

    /// Clamps every sample into `[0, 1]` in place.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Axis-aligned pixel rectangle, half-open: `[x, x + w) x [y, y + h)`,
/// origin at the image's top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    /// Both extents must be positive.
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Rect> {
        if w == 0 || h == 0 {
            return Err(Error::Geometry(format!("empty rect {w}x{h}")));
        }
        Ok(Rect { x, y, w, h })
    }

    #[inline]
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// True when the rect lies fully inside a `width` x `height` image.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    /// True when the pixel (x, y) lies inside the rect.
    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    /// Exact integer intersection area.
    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let ix = self.x.max(other.x);
        let iy = self.y.max(other.y);
        let ir = self.right().min(other.right());
        let ib = self.bottom().min(other.bottom());
        if ir > ix && ib > iy {
            (ir - ix) as u64 * (ib - iy) as u64
        } else {
            0
        }
    }

    /// Intersection over union, computed from exact integer areas.
    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Linear size relative to a square image: `sqrt(area) / image_size`.
    pub fn size_ratio(&self, image_size: u32) -> f64 {
        (self.area() as f64).sqrt() / image_size as f64
    }
}
