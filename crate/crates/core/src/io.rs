//! PNG and baseline JPEG file I/O for the integer storage form.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::image::{ByteImage, Image};

/// Output encoding for [`save_image`]. PNG round-trips bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaveFormat {
    Png,
    /// Baseline JPEG; quality in `[1, 100]`.
    Jpeg { quality: u8 },
}

/// Loads a PNG or JPEG file. Grayscale files come back as 1 channel, color
/// as 3 channels; any alpha channel is dropped.
pub fn load_image(path: &Path) -> Result<ByteImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: format!("unreadable: {e}"),
    })?;
    let grayscale = matches!(
        decoded.color(),
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
    );
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "zero-dimension image".into(),
        });
    }
    if grayscale {
        let gray = decoded.into_luma8();
        Image::new(gray.width(), gray.height(), 1, gray.into_raw())
    } else {
        let rgb = decoded.into_rgb8();
        Image::new(rgb.width(), rgb.height(), 3, rgb.into_raw())
    }
}

/// Writes an integer-form image as PNG or baseline JPEG.
pub fn save_image(img: &ByteImage, path: &Path, format: SaveFormat) -> Result<()> {
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = BufWriter::new(file);
    match format {
        SaveFormat::Png => PngEncoder::new(writer)
            .write_image(img.data(), img.width(), img.height(), color)
            .map_err(|e| Error::Encode {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }),
        SaveFormat::Jpeg { quality } => {
            if quality == 0 || quality > 100 {
                return Err(Error::Param(format!("jpeg quality {quality} outside [1, 100]")));
            }
            JpegEncoder::new_with_quality(writer, quality)
                .write_image(img.data(), img.width(), img.height(), color)
                .map_err(|e| Error::Encode {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })
        }
    }
}

/// Reads only the header of an image file and returns `(width, height)`.
pub fn image_dimensions(path: &Path) -> Result<(u32, u32)> {
    image::image_dimensions(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[allow(dead_code)]
fn _assert_dynamic_image_unused(_: DynamicImage) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        let img = ByteImage::filled(4, 4, 3, 0).unwrap();
        save_image(&img, &path, SaveFormat::Png).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn grayscale_loads_single_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = ByteImage::new(3, 2, 1, vec![0, 50, 100, 150, 200, 250]).unwrap();
        save_image(&img, &path, SaveFormat::Png).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(back, img);
    }

    #[test]
    fn jpeg_round_trip_close_on_constant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.jpg");
        let img = ByteImage::filled(32, 32, 3, 128).unwrap();
        save_image(&img, &path, SaveFormat::Jpeg { quality: 95 }).unwrap();
        let back = load_image(&path).unwrap();
        let max_dev = back
            .data()
            .iter()
            .map(|&v| (v as i32 - 128).unsigned_abs())
            .max()
            .unwrap();
        assert!(max_dev <= 2, "max deviation {max_dev} > 2");
    }

    #[test]
    fn truncated_file_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.png");
        let img = ByteImage::filled(16, 16, 3, 77).unwrap();
        save_image(&img, &path, SaveFormat::Png).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(err.to_string().contains("unreadable"), "{err}");
    }

    #[test]
    fn bad_directory_errors() {
        let img = ByteImage::filled(2, 2, 1, 0).unwrap();
        assert!(save_image(&img, Path::new("/no/such/dir/x.png"), SaveFormat::Png).is_err());
    }
}
