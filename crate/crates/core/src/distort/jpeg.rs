//! JPEG compression noise, simulated by the lossy core of the codec:
//! color transform, 8x8 block DCT, quantization against quality-scaled
//! standard tables, and the inverse path. The entropy-coding stages are
//! lossless and change no pixels, so they are skipped. No chroma
//! subsampling.

use crate::error::{Error, Result};
use crate::image::{Image, RealImage};

/// Standard luminance quantization table, row-major.
pub const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard chrominance quantization table, row-major.
pub const CHROMA_TABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales a base table for a quality setting: `scale = 5000 / q` below 50,
/// `200 - 2q` at or above; scaled entries clamp to `[1, 255]`.
pub fn scaled_table(base: &[u16; 64], quality: u32) -> [f64; 64] {
    let scale = if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    };
    let mut out = [0.0f64; 64];
    for (o, &b) in out.iter_mut().zip(base.iter()) {
        let q = (b as u32 * scale + 50) / 100;
        *o = q.clamp(1, 255) as f64;
    }
    out
}

/// Orthonormal 8-point DCT-II basis matrix.
fn dct_matrix() -> [[f64; 8]; 8] {
    let mut m = [[0.0f64; 8]; 8];
    for (k, row) in m.iter_mut().enumerate() {
        let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / 16.0).cos();
        }
    }
    m
}

/// `out = c * block * c^T` when `transpose_second` is false (forward DCT);
/// `out = c^T * block * c` when true (inverse DCT).
fn dct_2d(c: &[[f64; 8]; 8], block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let mut tmp = [0.0f64; 64];
    // tmp = M * block, with M = c (forward) or c^T (inverse).
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for (k, c_k) in c.iter().enumerate() {
                let m = if inverse { c_k[i] } else { c[i][k] };
                acc += m * block[k * 8 + j];
            }
            tmp[i * 8 + j] = acc;
        }
    }
    // out = tmp * M^T.
    let mut out = [0.0f64; 64];
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for (k, c_k) in c.iter().enumerate() {
                let m = if inverse { c_k[j] } else { c[j][k] };
                acc += tmp[i * 8 + k] * m;
            }
            out[i * 8 + j] = acc;
        }
    }
    out
}

/// Runs one plane (values on the 0..255 scale) through the DCT-quantize
/// round trip. The plane is padded to block multiples by edge replication
/// and cropped back afterwards.
fn roundtrip_plane(plane: &[f64], w: usize, h: usize, table: &[f64; 64]) -> Vec<f64> {
    let c = dct_matrix();
    let pw = w.div_ceil(8) * 8;
    let ph = h.div_ceil(8) * 8;
    let mut padded = vec![0.0f64; pw * ph];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            padded[y * pw + x] = plane[sy * w + x.min(w - 1)];
        }
    }
    let mut block = [0.0f64; 64];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            for i in 0..8 {
                for j in 0..8 {
                    block[i * 8 + j] = padded[(by + i) * pw + bx + j] - 128.0;
                }
            }
            let mut coeffs = dct_2d(&c, &block, false);
            for (f, q) in coeffs.iter_mut().zip(table.iter()) {
                *f = (*f / q).round() * q;
            }
            let rebuilt = dct_2d(&c, &coeffs, true);
            for i in 0..8 {
                for j in 0..8 {
                    padded[(by + i) * pw + bx + j] = rebuilt[i * 8 + j] + 128.0;
                }
            }
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        out[y * w..(y + 1) * w].copy_from_slice(&padded[y * pw..y * pw + w]);
    }
    out
}

/// JPEG-style distortion at a quality in `[1, 100]`.
pub fn apply_jpeg(img: &RealImage, quality: u32) -> Result<RealImage> {
    if quality == 0 || quality > 100 {
        return Err(Error::Param(format!("jpeg quality {quality} outside [1, 100]")));
    }
    let luma = scaled_table(&LUMA_TABLE, quality);
    let chroma = scaled_table(&CHROMA_TABLE, quality);
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = w * h;

    if img.channels() == 1 {
        let plane: Vec<f64> = img.data().iter().map(|&v| v * 255.0).collect();
        let out = roundtrip_plane(&plane, w, h, &luma);
        let data = out.iter().map(|&v| (v / 255.0).clamp(0.0, 1.0)).collect();
        return Image::new(img.width(), img.height(), 1, data);
    }

    // RGB -> YCbCr on the 0..255 scale.
    let mut yp = vec![0.0f64; n];
    let mut cb = vec![0.0f64; n];
    let mut cr = vec![0.0f64; n];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        let r = px[0] * 255.0;
        let g = px[1] * 255.0;
        let b = px[2] * 255.0;
        yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
        cr[i] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    let yp = roundtrip_plane(&yp, w, h, &luma);
    let cb = roundtrip_plane(&cb, w, h, &chroma);
    let cr = roundtrip_plane(&cr, w, h, &chroma);

    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        let (y, u, v) = (yp[i], cb[i] - 128.0, cr[i] - 128.0);
        let r = y + 1.402 * v;
        let g = y - 0.344136 * u - 0.714136 * v;
        let b = y + 1.772 * u;
        data.push((r / 255.0).clamp(0.0, 1.0));
        data.push((g / 255.0).clamp(0.0, 1.0));
        data.push((b / 255.0).clamp(0.0, 1.0));
    }
    Image::new(img.width(), img.height(), 3, data)
}
