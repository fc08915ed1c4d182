//! Base images: user-supplied photos or a procedural natural-looking stand-in.

use std::f32::consts::TAU;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, hsv_to_rgb, io, resample_bilinear, Image, Rect};
use crate::rng::Rng;

/// Where base images come from.
#[derive(Clone, Debug)]
pub enum BaseImages {
    Procedural,
    /// Procedural without the blob distractors and with a calmer texture.
    Smooth,
    Images(Vec<Image>),
}

impl BaseImages {
    /// Every `*.png` in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Argument(format!(
                "no PNG base images in {}",
                dir.display()
            )));
        }
        Ok(BaseImages::Images(
            paths.iter().map(|p| io::load_image(p)).collect::<Result<_>>()?,
        ))
    }

    /// A `height × width` base: a random crop of a random image, resized.
    pub fn draw(&self, height: usize, width: usize, rng: &mut Rng) -> Result<Image> {
        match self {
            BaseImages::Procedural => procedural_background(height, width, rng),
            BaseImages::Smooth => textured_background(height, width, false, rng),
            BaseImages::Images(images) => {
                let img = images
                    .choose(rng)
                    .ok_or_else(|| Error::Argument("empty base image list".into()))?;
                let (ih, iw) = (img.height() as f64, img.width() as f64);
                let aspect = height as f64 / width as f64;
                let (mut ch, mut cw) = if ih / iw > aspect {
                    (iw * aspect, iw)
                } else {
                    (ih, ih / aspect)
                };
                let s = rng.random_range(0.5..=1.0);
                ch = (ch * s).round().max(1.0);
                cw = (cw * s).round().max(1.0);
                let y = rng.random_range(0..=(img.height() - ch as usize));
                let x = rng.random_range(0..=(img.width() - cw as usize));
                let rect = Rect {
                    y,
                    x,
                    height: ch as usize,
                    width: cw as usize,
                };
                crop_resize(img, rect, height, width)
            }
        }
    }
}

/// Crop `rect` and resize it to `height × width`, low-passing first when
/// shrinking.
pub fn crop_resize(image: &Image, rect: Rect, height: usize, width: usize) -> Result<Image> {
    if rect.y + rect.height > image.height() || rect.x + rect.width > image.width() {
        return Err(Error::Size(format!(
            "crop {rect:?} exceeds {}×{} image",
            image.height(),
            image.width()
        )));
    }
    let (h, w) = (rect.height, rect.width);
    let plane = h * w;
    let factor = (h as f64 / height as f64).max(w as f64 / width as f64);
    let mut planar = vec![0.0f32; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let px = image.get(rect.y + y, rect.x + x);
            for c in 0..3 {
                planar[c * plane + y * w + x] = px[c];
            }
        }
    }
    if factor > 1.5 && h >= 8 && w >= 8 {
        let crop = Image::from_fn(h, w, |y, x| {
            [
                planar[y * w + x],
                planar[plane + y * w + x],
                planar[2 * plane + y * w + x],
            ]
        })?;
        let blurred = gaussian_blur(&crop, 0.5 * factor);
        for (i, px) in blurred.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * plane + i] = px[c];
            }
        }
    }
    let out = resample_bilinear(&planar, 3, (h, w), (height, width));
    let oplane = height * width;
    Image::from_fn(height, width, |y, x| {
        let i = y * width + x;
        [out[i], out[oplane + i], out[2 * oplane + i]]
    })
}

/// Smoothly interpolated lattice noise in [0,1], summed over octaves.
fn value_noise(height: usize, width: usize, base_cell: f32, octaves: usize, rng: &mut Rng) -> Vec<f32> {
    let mut out = vec![0.0f32; height * width];
    let mut amp = 1.0f32;
    let mut total = 0.0f32;
    let mut cell = base_cell;
    for _ in 0..octaves {
        let gh = (height as f32 / cell).ceil() as usize + 2;
        let gw = (width as f32 / cell).ceil() as usize + 2;
        let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.random::<f32>()).collect();
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        for y in 0..height {
            let fy = y as f32 / cell;
            let (iy, ty) = (fy as usize, smooth(fy.fract()));
            for x in 0..width {
                let fx = x as f32 / cell;
                let (ix, tx) = (fx as usize, smooth(fx.fract()));
                let at = |a: usize, b: usize| lattice[a * gw + b];
                let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                out[y * width + x] += amp * (top * (1.0 - ty) + bottom * ty);
            }
        }
        total += amp;
        amp *= 0.5;
        cell = (cell * 0.5).max(1.0);
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn natural_color(rng: &mut Rng) -> [f32; 3] {
    hsv_to_rgb([
        rng.random_range(0.0..TAU),
        rng.random_range(0.0..0.8),
        rng.random_range(0.15..0.95),
    ])
}

/// Gradient, multi-octave texture, soft blobs and sensor-like noise.
pub fn procedural_background(height: usize, width: usize, rng: &mut Rng) -> Result<Image> {
    textured_background(height, width, true, rng)
}

fn textured_background(height: usize, width: usize, clutter: bool, rng: &mut Rng) -> Result<Image> {
    let (top, bottom, tint) = (natural_color(rng), natural_color(rng), natural_color(rng));
    let angle = rng.random_range(0.0..TAU);
    let (sa, ca) = angle.sin_cos();
    let scale = height.max(width) as f32;
    let texture = value_noise(height, width, scale * rng.random_range(0.15..0.5), 5, rng);
    let detail = value_noise(height, width, rng.random_range(2.0..6.0), 2, rng);
    let mut texture_amp = rng.random_range(0.2..0.6f32);
    let detail_amp = rng.random_range(0.0..0.2f32);
    let blobs: Vec<_> = (0..rng.random_range(2..=6))
        .map(|_| {
            (
                rng.random_range(0.0..height as f32),
                rng.random_range(0.0..width as f32),
                scale * rng.random_range(0.05..0.35f32),
                scale * rng.random_range(0.05..0.35f32),
                natural_color(rng),
                rng.random_range(0.3..0.8f32),
            )
        })
        .collect();
    let blobs = if clutter {
        blobs
    } else {
        texture_amp *= 0.3;
        Vec::new()
    };
    let noise_std = rng.random_range(0.0..0.03f32);
    let noise: Vec<f32> = (0..height * width * 3)
        .map(|_| noise_std * (rng.random::<f32>() + rng.random::<f32>() + rng.random::<f32>() - 1.5))
        .collect();
    Image::from_fn(height, width, |y, x| {
        let u = ((x as f32 / width as f32 - 0.5) * ca + (y as f32 / height as f32 - 0.5) * sa + 0.5)
            .clamp(0.0, 1.0);
        let i = y * width + x;
        let t = texture[i] - 0.5;
        let d = detail[i] - 0.5;
        let mut rgb = [0.0f32; 3];
        for c in 0..3 {
            let g = top[c] * (1.0 - u) + bottom[c] * u;
            rgb[c] = g + texture_amp * t * (0.5 + tint[c]) + detail_amp * d;
        }
        for (by, bx, ry, rx, color, strength) in &blobs {
            let r2 = ((y as f32 - by) / ry).powi(2) + ((x as f32 - bx) / rx).powi(2);
            let a = strength * (-r2 * r2).exp();
            for c in 0..3 {
                rgb[c] = rgb[c] * (1.0 - a) + color[c] * a;
            }
        }
        for c in 0..3 {
            rgb[c] += noise[i * 3 + c];
        }
        rgb
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::compute_stats;
    use crate::rng::rng_from_seed;

    #[test]
    fn procedural_backgrounds_are_deterministic_and_varied() {
        let a = procedural_background(48, 40, &mut rng_from_seed(5)).unwrap();
        let b = procedural_background(48, 40, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        let mut rng = rng_from_seed(6);
        for _ in 0..20 {
            let img = procedural_background(32, 32, &mut rng).unwrap();
            assert!(compute_stats(&img, None).unwrap().global_contrast > 0.0);
        }
        let smooth = BaseImages::Smooth.draw(48, 40, &mut rng_from_seed(5)).unwrap();
        assert_ne!(smooth, a);
        let mean_contrast = |smooth: bool| {
            (0..16u64)
                .map(|s| {
                    let img = textured_background(32, 32, !smooth, &mut rng_from_seed(100 + s)).unwrap();
                    compute_stats(&img, None).unwrap().local_contrast
                })
                .sum::<f32>()
        };
        assert!(mean_contrast(true) < mean_contrast(false));
    }

    #[test]
    fn crop_resize_of_constant_is_constant() {
        let img = Image::filled(40, 30, [0.2, 0.4, 0.6]).unwrap();
        let rect = Rect {
            y: 5,
            x: 3,
            height: 30,
            width: 20,
        };
        let out = crop_resize(&img, rect, 9, 8).unwrap();
        for px in out.pixels().chunks_exact(3) {
            assert!((px[0] - 0.2).abs() < 1e-6 && (px[2] - 0.6).abs() < 1e-6);
        }
        let bad = Rect { y: 20, ..rect };
        assert!(crop_resize(&img, bad, 8, 8).is_err());
    }

    #[test]
    fn image_list_draws_requested_size() {
        let img = Image::from_fn(50, 70, |y, x| [y as f32 / 50.0, x as f32 / 70.0, 0.5]).unwrap();
        let bases = BaseImages::Images(vec![img]);
        let out = bases.draw(16, 24, &mut rng_from_seed(1)).unwrap();
        assert_eq!((out.height(), out.width()), (16, 24));
    }
}
