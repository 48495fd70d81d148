//! PNG / binary PGM / PPM reading and writing, plus JSON and CSV helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ExtendedColorType, ImageFormat};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ffrc::FeatureCurve;
use crate::raster::{BinaryMask, Image};

/// Like `image::open`, but a file that cannot be read is an I/O error
/// rather than a codec error.
fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Codec(other),
    })
}

/// Decodes PNG or PNM; gray sources stay single-channel, everything else
/// becomes RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let dynamic = open(path)?;
    if dynamic.color().has_color() {
        let rgb = dynamic.to_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(w as usize, h as usize, 3, rgb.into_raw())
    } else {
        let gray = dynamic.to_luma8();
        let (w, h) = gray.dimensions();
        Image::new(w as usize, h as usize, 1, gray.into_raw())
    }
}

/// Loads an RGB image; gray inputs are expanded to three equal channels.
pub fn load_rgb(path: &Path) -> Result<Image> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::new(w as usize, h as usize, 3, rgb.into_raw())
}

fn pnm_bytes(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

/// Writes by extension: `.png`, `.pgm` (gray) or `.ppm` (RGB).
pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => {
            let color = if image.channels() == 1 {
                ExtendedColorType::L8
            } else {
                ExtendedColorType::Rgb8
            };
            image::save_buffer_with_format(
                path,
                image.data(),
                image.width() as u32,
                image.height() as u32,
                color,
                ImageFormat::Png,
            )?;
            Ok(())
        }
        "pgm" | "ppm" | "pnm" => {
            if (ext == "pgm" && image.channels() != 1) || (ext == "ppm" && image.channels() != 3) {
                return Err(Error::ChannelMismatch {
                    expected: if ext == "pgm" { 1 } else { 3 },
                    actual: image.channels(),
                });
            }
            fs::write(path, pnm_bytes(image))?;
            Ok(())
        }
        other => Err(Error::param("path", format!("unsupported image extension `{other}`"))),
    }
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let gray = open(path)?.to_luma8();
    let (w, h) = gray.dimensions();
    BinaryMask::new(w as usize, h as usize, gray.into_raw().into_iter().map(|v| v > 0).collect())
}

/// Masks are stored as images with foreground 255 and background 0.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    save_image(&mask.to_image(), path)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// `column,raw,filtered` rows, one per image column.
pub fn write_curve_csv(raw: &FeatureCurve, filtered: &FeatureCurve, path: &Path) -> Result<()> {
    if raw.len() != filtered.len() {
        return Err(Error::Size("raw and filtered curves differ in length".into()));
    }
    let mut out = Vec::with_capacity(raw.len() * 16);
    writeln!(out, "column,raw,filtered")?;
    for (i, (r, f)) in raw.values.iter().zip(&filtered.values).enumerate() {
        writeln!(out, "{i},{r},{f:.6}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = BinaryMask::from_fn(13, 7, |x, y| (x + y) % 3 == 0);
        save_mask(&mask, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n13 7\n255\n"));
        assert!(bytes[12..].iter().all(|&b| b == 0 || b == 255));
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 11 % 256) as u8).collect();
        let img = Image::new(5, 4, 3, data).unwrap();
        for name in ["a.png", "a.ppm"] {
            let path = dir.path().join(name);
            save_image(&img, &path).unwrap();
            assert_eq!(load_image(&path).unwrap(), img);
        }
        assert!(save_image(&img, &dir.path().join("a.pgm")).is_err());
        assert!(save_image(&img, &dir.path().join("a.bmp")).is_err());
    }
}
