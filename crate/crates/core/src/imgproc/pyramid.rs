//! Gaussian scale pyramid.

use super::Image;
use crate::error::{Error, Result};
use crate::tensor::resample_planes;

/// Images of one input at decreasing blur, coarse first; the last level is
/// the input itself at σ = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePyramid {
    pub levels: Vec<Image>,
    pub scale_factors: Vec<f64>,
}

impl ScalePyramid {
    pub fn finest(&self) -> &Image {
        self.levels.last().expect("pyramid has at least one level")
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Scale factors σ_ℓ = step^(levels−1−ℓ), coarse first.
pub fn scale_factors(num_levels: usize, sigma_step: f64) -> Vec<f64> {
    (0..num_levels)
        .map(|l| sigma_step.powi((num_levels - 1 - l) as i32))
        .collect()
}

/// Level sizes `round(H/σ_ℓ) × round(W/σ_ℓ)`, coarse first.
pub fn pyramid_sizes(
    height: usize,
    width: usize,
    num_levels: usize,
    sigma_step: f64,
) -> Vec<(usize, usize)> {
    scale_factors(num_levels, sigma_step)
        .into_iter()
        .map(|s| {
            (
                round_half_up(height as f64 / s),
                round_half_up(width as f64 / s),
            )
        })
        .collect()
}

fn gaussian_kernel(std: f64) -> Vec<f32> {
    let radius = (3.0 * std).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total) as f32).collect()
}

/// Separable Gaussian blur of a planar buffer with replicated borders.
fn blur_planes(data: &[f32], planes: usize, (h, w): (usize, usize), std: f64) -> Vec<f32> {
    let kernel = gaussian_kernel(std);
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; data.len()];
    let mut out = vec![0.0f32; data.len()];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let mid = &mut tmp[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (k, kw) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kw * src[y * w + xx];
                }
                mid[y * w + x] = acc;
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (k, kw) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kw * mid[yy * w + x];
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}

fn to_planar(image: &Image) -> Vec<f32> {
    let plane = image.height() * image.width();
    let mut out = vec![0.0f32; 3 * plane];
    for (i, px) in image.pixels().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c];
        }
    }
    out
}

fn from_planar(data: &[f32], h: usize, w: usize) -> Image {
    let plane = h * w;
    let mut pixels = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            pixels[i * 3 + c] = data[c * plane + i].clamp(0.0, 1.0);
        }
    }
    Image::from_parts_unchecked(h, w, pixels)
}

/// Gaussian blur of an RGB image (std in pixels, kernel truncated at 3 std).
pub fn gaussian_blur(image: &Image, std: f64) -> Image {
    let (h, w) = (image.height(), image.width());
    from_planar(&blur_planes(&to_planar(image), 3, (h, w), std), h, w)
}

/// Half-pixel bilinear resample of `planes` planar channels.
pub fn resample_bilinear(
    data: &[f32],
    planes: usize,
    from: (usize, usize),
    to: (usize, usize),
) -> Vec<f32> {
    resample_planes(data, planes, from, to)
}

pub fn build_pyramid(image: &Image, num_levels: usize, sigma_step: f64) -> Result<ScalePyramid> {
    if num_levels == 0 {
        return Err(Error::Argument("pyramid needs at least one level".into()));
    }
    if sigma_step <= 1.0 || !sigma_step.is_finite() {
        return Err(Error::Argument(format!(
            "sigma_step must exceed 1, got {sigma_step}"
        )));
    }
    let (h, w) = (image.height(), image.width());
    let factors = scale_factors(num_levels, sigma_step);
    let sizes = pyramid_sizes(h, w, num_levels, sigma_step);
    if let Some((lh, lw)) = sizes.first().filter(|(a, b)| *a < 8 || *b < 8) {
        return Err(Error::Size(format!(
            "coarsest pyramid level of a {h}×{w} image would be {lh}×{lw}, below 8×8"
        )));
    }
    let planar = to_planar(image);
    let mut levels = Vec::with_capacity(num_levels);
    for (sigma, (lh, lw)) in factors.iter().zip(&sizes) {
        if *sigma == 1.0 {
            levels.push(image.clone());
            continue;
        }
        let blurred = blur_planes(&planar, 3, (h, w), 0.5 * sigma);
        let resized = resample_planes(&blurred, 3, (h, w), (*lh, *lw));
        levels.push(from_planar(&resized, *lh, *lw));
    }
    Ok(ScalePyramid {
        levels,
        scale_factors: factors,
    })
}
