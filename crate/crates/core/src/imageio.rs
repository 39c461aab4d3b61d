//! PNG encoding with fixed encoder settings so output bytes are reproducible.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, GrayImage, ImageEncoder, ImageError, RgbImage};

fn encode(buf: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(Cursor::new(&mut out), CompressionType::Fast, FilterType::Sub)
        .write_image(buf, w, h, color)?;
    Ok(out)
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>, ImageError> {
    encode(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>, ImageError> {
    encode(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<(), ImageError> {
    std::fs::write(path, encode_rgb_png(img)?)?;
    Ok(())
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<(), ImageError> {
    std::fs::write(path, encode_gray_png(img)?)?;
    Ok(())
}
