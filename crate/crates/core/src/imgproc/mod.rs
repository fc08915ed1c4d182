//! Image containers and the pixel-level operations used by synthesis and by
//! the cascade's input path.

mod attributes;
mod color;
pub mod io;
mod jpeg;
mod pyramid;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use attributes::{
    adjust_attributes, compute_stats, sprite_stats, AdjustMode, AttributeStats, Rect,
};
pub use color::{hsv_to_rgb, rgb_to_hsv};
pub use jpeg::{jpeg_degrade, psnr, quant_tables};
pub use pyramid::{
    build_pyramid, gaussian_blur, pyramid_sizes, resample_bilinear, scale_factors, ScalePyramid,
};

/// Smallest side an [`Image`] may have.
pub const MIN_SIDE: usize = 8;

/// RGB image, H×W×3 interleaved, values in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::Size(format!(
                "image {height}×{width} is smaller than {MIN_SIDE}×{MIN_SIDE}"
            )));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "{height}×{width}×3 image needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Build from a per-pixel RGB function; values are clamped to [0,1].
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend(f(y, x).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.iter().enumerate() {
            self.pixels[i + c] = v.clamp(0.0, 1.0);
        }
    }

    /// Planar 1×3×H×W tensor with the values shifted to [−0.5, 0.5].
    pub fn to_input_tensor(&self) -> Tensor<f32> {
        let plane = self.height * self.width;
        let mut data = vec![0.0f32; 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] - 0.5;
            }
        }
        Tensor::new(&[1, 3, self.height, self.width], data).expect("sizes agree")
    }

    pub(crate) fn from_parts_unchecked(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            height,
            width,
            pixels,
        }
    }
}

/// H×W mask with values in {0,1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}×{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| *v > 1) {
            return Err(Error::Argument("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|v| *v as usize).sum()
    }

    /// Fraction of positive pixels.
    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Dimension("mask union of differing sizes".into()));
        }
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect(),
        })
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(
            &[1, 1, self.height, self.width],
            self.data.iter().map(|v| *v as f32).collect(),
        )
        .expect("sizes agree")
    }
}

/// H×W map of per-pixel scores in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl SoftMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{height}×{width} soft mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Positive where the score is at least `threshold`.
    pub fn binarize(&self, threshold: f32) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| u8::from(*v >= threshold)).collect(),
        }
    }
}

impl From<&BinaryMask> for SoftMask {
    fn from(mask: &BinaryMask) -> Self {
        SoftMask {
            height: mask.height,
            width: mask.width,
            data: mask.data.iter().map(|v| *v as f32).collect(),
        }
    }
}

/// RGBA sprite with straight (non-premultiplied) alpha; sides may be small.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    height: usize,
    width: usize,
    rgba: Vec<f32>,
}

impl Sprite {
    pub fn new(height: usize, width: usize, rgba: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || rgba.len() != height * width * 4 {
            return Err(Error::Dimension(format!(
                "{height}×{width} sprite with {} values",
                rgba.len()
            )));
        }
        Ok(Self {
            height,
            width,
            rgba,
        })
    }

    pub fn transparent(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rgba: vec![0.0; height * width * 4],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rgba(&self) -> &[f32] {
        &self.rgba
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 4] {
        let i = (y * self.width + x) * 4;
        [
            self.rgba[i],
            self.rgba[i + 1],
            self.rgba[i + 2],
            self.rgba[i + 3],
        ]
    }

    pub fn set(&mut self, y: usize, x: usize, px: [f32; 4]) {
        let i = (y * self.width + x) * 4;
        for (c, v) in px.iter().enumerate() {
            self.rgba[i + c] = v.clamp(0.0, 1.0);
        }
    }

    pub fn alpha(&self, y: usize, x: usize) -> f32 {
        self.rgba[(y * self.width + x) * 4 + 3]
    }

    /// Number of pixels with alpha above one half.
    pub fn coverage(&self) -> usize {
        self.rgba.chunks_exact(4).filter(|p| p[3] > 0.5).count()
    }

    /// Force alpha to {0,1} at the one-half threshold.
    pub fn harden_alpha(&mut self) {
        for p in self.rgba.chunks_exact_mut(4) {
            p[3] = if p[3] > 0.5 { 1.0 } else { 0.0 };
        }
    }

    /// Bilinear resample (half-pixel centers) in premultiplied space.
    pub fn resized(&self, height: usize, width: usize) -> Result<Sprite> {
        if height == 0 || width == 0 {
            return Err(Error::Size("sprite resize target is empty".into()));
        }
        let plane = self.height * self.width;
        let mut planar = vec![0.0f32; 4 * plane];
        for (i, p) in self.rgba.chunks_exact(4).enumerate() {
            for c in 0..3 {
                planar[c * plane + i] = p[c] * p[3];
            }
            planar[3 * plane + i] = p[3];
        }
        let out = resample_bilinear(&planar, 4, (self.height, self.width), (height, width));
        let oplane = height * width;
        let mut rgba = vec![0.0f32; 4 * oplane];
        for i in 0..oplane {
            let a = out[3 * oplane + i].clamp(0.0, 1.0);
            for c in 0..3 {
                rgba[i * 4 + c] = if a > 1e-6 {
                    (out[c * oplane + i] / a).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
            rgba[i * 4 + 3] = a;
        }
        Ok(Sprite {
            height,
            width,
            rgba,
        })
    }

    pub(crate) fn rgba_mut(&mut self) -> &mut [f32] {
        &mut self.rgba
    }
}
