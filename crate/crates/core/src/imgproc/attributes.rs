//! Colour-attribute statistics and pattern attribute alignment.

use std::f32::consts::{PI, TAU};

use rand::Rng;

use super::color::{hsv_to_rgb, rgb_to_hsv};
use super::{Image, Sprite};
use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle `[y, y+height) × [x, x+width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Grow by `fraction` of the size on every side, clamped to `height × width`.
    pub fn dilated(&self, fraction: f64, height: usize, width: usize) -> Rect {
        let dy = (self.height as f64 * fraction).round() as usize;
        let dx = (self.width as f64 * fraction).round() as usize;
        let y0 = self.y.saturating_sub(dy);
        let x0 = self.x.saturating_sub(dx);
        let y1 = (self.y + self.height + dy).min(height);
        let x1 = (self.x + self.width + dx).min(width);
        Rect {
            y: y0,
            x: x0,
            height: y1 - y0,
            width: x1 - x0,
        }
    }
}

/// HSV-based saliency cues of an image region.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttributeStats {
    /// Mean HSV value.
    pub brightness: f32,
    /// Mean HSV saturation.
    pub saturation: f32,
    /// Circular mean of HSV hue, radians in [0, 2π).
    pub hue: f32,
    /// Population std of V over the window.
    pub local_contrast: f32,
    /// Population std of V over the whole image.
    pub global_contrast: f32,
}

#[derive(Default)]
struct Accum {
    weight: f64,
    v: f64,
    v2: f64,
    s: f64,
    hx: f64,
    hy: f64,
}

impl Accum {
    fn push(&mut self, hsv: [f32; 3], w: f64) {
        let [h, s, v] = hsv.map(f64::from);
        self.weight += w;
        self.v += w * v;
        self.v2 += w * v * v;
        self.s += w * s;
        self.hx += w * h.cos();
        self.hy += w * h.sin();
    }

    fn mean_v(&self) -> f32 {
        (self.v / self.weight) as f32
    }

    fn std_v(&self) -> f32 {
        let m = self.v / self.weight;
        (self.v2 / self.weight - m * m).max(0.0).sqrt() as f32
    }

    fn mean_s(&self) -> f32 {
        (self.s / self.weight) as f32
    }

    fn hue(&self) -> f32 {
        if self.hx.abs() < 1e-12 && self.hy.abs() < 1e-12 {
            return 0.0;
        }
        let h = (self.hy.atan2(self.hx) as f32).rem_euclid(TAU);
        if h >= TAU {
            0.0
        } else {
            h
        }
    }
}

fn accumulate_rect(image: &Image, rect: Rect) -> Accum {
    let mut acc = Accum::default();
    for y in rect.y..rect.y + rect.height {
        for x in rect.x..rect.x + rect.width {
            acc.push(rgb_to_hsv(image.get(y, x)), 1.0);
        }
    }
    acc
}

/// Statistics over `window` (or the whole image). `global_contrast` always
/// covers the whole image.
pub fn compute_stats(image: &Image, window: Option<Rect>) -> Result<AttributeStats> {
    let full = Rect {
        y: 0,
        x: 0,
        height: image.height(),
        width: image.width(),
    };
    let global = accumulate_rect(image, full);
    let local = match window {
        None => None,
        Some(r) => {
            if r.y + r.height > image.height() || r.x + r.width > image.width() {
                return Err(Error::Size(format!(
                    "window {r:?} exceeds {}×{} image",
                    image.height(),
                    image.width()
                )));
            }
            if r.area() < 4 {
                return Err(Error::Size(format!("window {r:?} covers fewer than 4 pixels")));
            }
            Some(accumulate_rect(image, r))
        }
    };
    let region = local.as_ref().unwrap_or(&global);
    Ok(AttributeStats {
        brightness: region.mean_v(),
        saturation: region.mean_s(),
        hue: region.hue(),
        local_contrast: region.std_v(),
        global_contrast: global.std_v(),
    })
}

/// Alpha-weighted statistics of a sprite's visible pixels. Both contrast
/// fields hold the alpha-weighted std of V.
pub fn sprite_stats(sprite: &Sprite) -> AttributeStats {
    let mut acc = Accum::default();
    for p in sprite.rgba().chunks_exact(4) {
        if p[3] > 0.0 {
            acc.push(rgb_to_hsv([p[0], p[1], p[2]]), f64::from(p[3]));
        }
    }
    if acc.weight <= 0.0 {
        return AttributeStats {
            brightness: 0.0,
            saturation: 0.0,
            hue: 0.0,
            local_contrast: 0.0,
            global_contrast: 0.0,
        };
    }
    let c = acc.std_v();
    AttributeStats {
        brightness: acc.mean_v(),
        saturation: acc.mean_s(),
        hue: acc.hue(),
        local_contrast: c,
        global_contrast: c,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjustMode {
    Match,
    Mismatch,
}

/// Signed shortest angular difference `to − from` in (−π, π].
fn angle_diff(to: f32, from: f32) -> f32 {
    let d = (to - from).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Push a sprite's colour attributes toward (`Match`) or away from
/// (`Mismatch`) the target statistics.
///
/// Match shifts mean brightness and saturation toward the target by
/// `strength` of the gap, rotates hue by `strength` of the angular gap and
/// moves V contrast toward the target's local contrast. Mismatch shifts
/// brightness and saturation away from the target by `0.4·strength` and
/// rotates hue by a random angle in [π/2, 3π/2]. Alpha is never modified.
pub fn adjust_attributes(
    sprite: &Sprite,
    target: &AttributeStats,
    mode: AdjustMode,
    strength: f32,
    rng: &mut impl Rng,
) -> Result<Sprite> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Argument(format!("strength {strength} outside [0,1]")));
    }
    let own = sprite_stats(sprite);
    let (dv, ds, dh, contrast) = match mode {
        AdjustMode::Match => {
            if strength == 0.0 {
                return Ok(sprite.clone());
            }
            let ratio = if own.local_contrast > 1e-4 {
                (target.local_contrast / own.local_contrast).clamp(0.5, 2.0)
            } else {
                1.0
            };
            (
                strength * (target.brightness - own.brightness),
                strength * (target.saturation - own.saturation),
                strength * angle_diff(target.hue, own.hue),
                1.0 + strength * (ratio - 1.0),
            )
        }
        AdjustMode::Mismatch => {
            let away = |own: f32, target: f32, rng: &mut dyn rand::RngCore| {
                let sign = if own > target {
                    1.0
                } else if own < target {
                    -1.0
                } else if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                };
                // Away from the target, unless that side has no headroom.
                let room_up = 1.0 - own;
                let sign = if sign > 0.0 && room_up < 0.05 && own > 0.1 {
                    -1.0
                } else if sign < 0.0 && own < 0.05 && room_up > 0.1 {
                    1.0
                } else {
                    sign
                };
                sign * 0.4 * strength
            };
            let dv = away(own.brightness, target.brightness, rng);
            let ds = away(own.saturation, target.saturation, rng);
            let dh = rng.random_range(PI / 2.0..=3.0 * PI / 2.0);
            (dv, ds, dh, 1.0)
        }
    };
    let mut out = sprite.clone();
    for p in out.rgba_mut().chunks_exact_mut(4) {
        let [h, s, v] = rgb_to_hsv([p[0], p[1], p[2]]);
        let v = own.brightness + contrast * (v - own.brightness) + dv;
        let rgb = hsv_to_rgb([h + dh, (s + ds).clamp(0.0, 1.0), v.clamp(0.0, 1.0)]);
        p[..3].copy_from_slice(&rgb);
    }
    Ok(out)
}
