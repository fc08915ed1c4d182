//! PNG reading and writing for images, sprites and masks.

use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, RgbImage, RgbaImage};

use super::{BinaryMask, Image, SoftMask, Sprite};
use crate::error::{Error, Result};

fn codec_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| codec_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Image::new(h as usize, w as usize, pixels)
}

pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    let raw = image.pixels().iter().map(|v| to_u8(*v)).collect();
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

pub fn load_sprite(path: &Path) -> Result<Sprite> {
    let img = image::open(path).map_err(|e| codec_err(path, e))?.to_rgba8();
    let (w, h) = img.dimensions();
    let rgba = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Sprite::new(h as usize, w as usize, rgba)
}

pub fn save_sprite(path: &Path, sprite: &Sprite) -> Result<()> {
    let raw = sprite.rgba().iter().map(|v| to_u8(*v)).collect();
    let buf = RgbaImage::from_raw(sprite.width() as u32, sprite.height() as u32, raw)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

/// Single-channel PNG, 0 or 255.
pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let raw = mask.data().iter().map(|v| v * 255).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

/// Any grayscale-convertible PNG; values above 127 are positive.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| codec_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|Luma([v])| u8::from(*v > 127)).collect();
    BinaryMask::new(h as usize, w as usize, data)
}

pub fn save_soft_mask(path: &Path, mask: &SoftMask) -> Result<()> {
    let raw = mask.data().iter().map(|v| to_u8(*v)).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}
