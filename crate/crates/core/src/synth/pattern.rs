//! Procedural pattern rasterisation.

use std::f32::consts::TAU;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;

use super::font::{self, GLYPH_COLS, GLYPH_ROWS};
use super::{Category, Pattern};
use crate::error::{Error, Result};
use crate::imgproc::{hsv_to_rgb, io, Sprite};
use crate::rng::Rng;

/// Supplies coverage-sized patterns (stickers and logos).
pub trait PatternSource: Send + Sync {
    fn draw(&self, category: Category, rng: &mut Rng) -> Result<Pattern>;
}

/// Procedurally generated patterns.
#[derive(Clone, Copy, Debug, Default)]
pub struct Procedural;

impl PatternSource for Procedural {
    fn draw(&self, category: Category, rng: &mut Rng) -> Result<Pattern> {
        Ok(generate_pattern(category, rng))
    }
}

/// User-supplied RGBA sprites, drawn uniformly.
#[derive(Clone, Debug)]
pub struct SpriteLibrary {
    sprites: Vec<Sprite>,
}

impl SpriteLibrary {
    pub fn new(sprites: Vec<Sprite>) -> Result<Self> {
        if sprites.is_empty() {
            return Err(Error::Argument("sprite library is empty".into()));
        }
        if let Some(i) = sprites.iter().position(|s| s.coverage() == 0) {
            return Err(Error::Argument(format!("sprite {i} is fully transparent")));
        }
        Ok(Self { sprites })
    }

    /// Every `*.png` in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        let sprites = paths
            .iter()
            .map(|p| io::load_sprite(p).map(|s| trim_to_alpha(&s)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sprites)
    }

    pub fn len(&self) -> usize {
        self.sprites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sprites.is_empty()
    }
}

impl PatternSource for SpriteLibrary {
    fn draw(&self, category: Category, rng: &mut Rng) -> Result<Pattern> {
        let sprite = self.sprites.choose(rng).expect("library is non-empty").clone();
        Ok(Pattern { sprite, category })
    }
}

/// A pattern at its native size.
pub fn generate_pattern(category: Category, rng: &mut Rng) -> Pattern {
    let sprite = match category {
        Category::Sticker => sticker(rng),
        Category::Logo => logo(rng),
        Category::Line => render_line(3, (64, 64), rng),
        Category::Text => render_text(0.1, 0.02, (64, 64), rng).0,
    };
    Pattern { sprite, category }
}

fn random_color(rng: &mut Rng) -> [f32; 3] {
    hsv_to_rgb([
        rng.random_range(0.0..TAU),
        rng.random_range(0.3..=1.0),
        rng.random_range(0.3..=1.0),
    ])
}

fn distinct_color(rng: &mut Rng, used: &[[f32; 3]]) -> [f32; 3] {
    let far = |c: &[f32; 3]| {
        used.iter().all(|u| {
            u.iter()
                .zip(c)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max)
                >= 0.25
        })
    };
    let mut c = random_color(rng);
    for _ in 0..64 {
        if far(&c) {
            break;
        }
        c = random_color(rng);
    }
    c
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse {
        cx: f32,
        cy: f32,
        rx: f32,
        ry: f32,
        rot: f32,
    },
    Superellipse {
        cx: f32,
        cy: f32,
        rx: f32,
        ry: f32,
        p: f32,
    },
    /// Regular polygon whose corners are rounded with radius `round`.
    Polygon {
        cx: f32,
        cy: f32,
        radius: f32,
        sides: usize,
        rot: f32,
        round: f32,
    },
    Rect {
        cx: f32,
        cy: f32,
        hw: f32,
        hh: f32,
        rot: f32,
    },
    Triangle([(f32, f32); 3]),
    Ring {
        cx: f32,
        cy: f32,
        outer: f32,
        inner: f32,
    },
}

fn rotate(x: f32, y: f32, cx: f32, cy: f32, rot: f32) -> (f32, f32) {
    let (s, c) = rot.sin_cos();
    let (dx, dy) = (x - cx, y - cy);
    (c * dx + s * dy, -s * dx + c * dy)
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (p.0 - a.0 - t * abx, p.1 - a.1 - t * aby);
    (dx * dx + dy * dy).sqrt()
}

fn edge_side(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn in_convex(p: (f32, f32), verts: &[(f32, f32)]) -> bool {
    let n = verts.len();
    let mut sign = 0.0f32;
    for i in 0..n {
        let s = edge_side(p, verts[i], verts[(i + 1) % n]);
        if s != 0.0 {
            if sign != 0.0 && s.signum() != sign {
                return false;
            }
            sign = s.signum();
        }
    }
    true
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, rot } => {
                let (u, v) = rotate(x, y, cx, cy, rot);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Superellipse { cx, cy, rx, ry, p } => {
                ((x - cx) / rx).abs().powf(p) + ((y - cy) / ry).abs().powf(p) <= 1.0
            }
            Shape::Polygon {
                cx,
                cy,
                radius,
                sides,
                rot,
                round,
            } => {
                let core = (radius - round).max(0.0);
                let verts: Vec<_> = (0..sides)
                    .map(|i| {
                        let a = rot + TAU * i as f32 / sides as f32;
                        (cx + core * a.cos(), cy + core * a.sin())
                    })
                    .collect();
                in_convex((x, y), &verts)
                    || (0..sides).any(|i| {
                        segment_distance((x, y), verts[i], verts[(i + 1) % sides]) <= round
                    })
            }
            Shape::Rect { cx, cy, hw, hh, rot } => {
                let (u, v) = rotate(x, y, cx, cy, rot);
                u.abs() <= hw && v.abs() <= hh
            }
            Shape::Triangle(v) => in_convex((x, y), &v),
            Shape::Ring {
                cx,
                cy,
                outer,
                inner,
            } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                d2 <= outer * outer && d2 >= inner * inner
            }
        }
    }

    /// Same shape shrunk or grown by `k` about its centre.
    fn scaled(&self, k: f32) -> Shape {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, rot } => Shape::Ellipse {
                cx,
                cy,
                rx: rx * k,
                ry: ry * k,
                rot,
            },
            Shape::Superellipse { cx, cy, rx, ry, p } => Shape::Superellipse {
                cx,
                cy,
                rx: rx * k,
                ry: ry * k,
                p,
            },
            Shape::Polygon {
                cx,
                cy,
                radius,
                sides,
                rot,
                round,
            } => Shape::Polygon {
                cx,
                cy,
                radius: radius * k,
                sides,
                rot,
                round: round * k,
            },
            Shape::Rect { cx, cy, hw, hh, rot } => Shape::Rect {
                cx,
                cy,
                hw: hw * k,
                hh: hh * k,
                rot,
            },
            Shape::Triangle(v) => {
                let cx = (v[0].0 + v[1].0 + v[2].0) / 3.0;
                let cy = (v[0].1 + v[1].1 + v[2].1) / 3.0;
                Shape::Triangle(v.map(|(x, y)| (cx + (x - cx) * k, cy + (y - cy) * k)))
            }
            Shape::Ring {
                cx,
                cy,
                outer,
                inner,
            } => Shape::Ring {
                cx,
                cy,
                outer: outer * k,
                inner: inner * k,
            },
        }
    }
}

struct Layer {
    shape: Shape,
    clip: Option<Shape>,
    hole: Option<Shape>,
    color: [f32; 3],
}

impl Layer {
    fn plain(shape: Shape, color: [f32; 3]) -> Self {
        Self {
            shape,
            clip: None,
            hole: None,
            color,
        }
    }

    fn covers(&self, x: f32, y: f32) -> bool {
        self.shape.contains(x, y)
            && self.clip.is_none_or(|c| c.contains(x, y))
            && !self.hole.is_some_and(|h| h.contains(x, y))
    }
}

/// 2×2 supersampled rasterisation; later layers paint over earlier ones.
fn rasterize(height: usize, width: usize, layers: &[Layer]) -> Sprite {
    const OFFSETS: [f32; 2] = [0.25, 0.75];
    let mut sprite = Sprite::transparent(height, width);
    for y in 0..height {
        for x in 0..width {
            let mut rgb = [0.0f32; 3];
            let mut hits = 0u32;
            for oy in OFFSETS {
                for ox in OFFSETS {
                    let (px, py) = (x as f32 + ox, y as f32 + oy);
                    if let Some(layer) = layers.iter().rev().find(|l| l.covers(px, py)) {
                        hits += 1;
                        for c in 0..3 {
                            rgb[c] += layer.color[c];
                        }
                    }
                }
            }
            if hits > 0 {
                let n = hits as f32;
                sprite.set(y, x, [rgb[0] / n, rgb[1] / n, rgb[2] / n, n / 4.0]);
            }
        }
    }
    sprite
}

/// Crop to the bounding box of nonzero alpha.
pub fn trim_to_alpha(sprite: &Sprite) -> Sprite {
    let (h, w) = (sprite.height(), sprite.width());
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0, w, 0);
    for y in 0..h {
        for x in 0..w {
            if sprite.alpha(y, x) > 0.0 {
                y0 = y0.min(y);
                y1 = y1.max(y + 1);
                x0 = x0.min(x);
                x1 = x1.max(x + 1);
            }
        }
    }
    if y0 >= y1 {
        return sprite.clone();
    }
    let mut out = Sprite::transparent(y1 - y0, x1 - x0);
    for y in y0..y1 {
        for x in x0..x1 {
            out.set(y - y0, x - x0, sprite.get(y, x));
        }
    }
    out
}

fn sticker(rng: &mut Rng) -> Sprite {
    loop {
        let sprite = sticker_attempt(rng);
        if opaque_colors(&sprite) >= 2 {
            return sprite;
        }
    }
}

fn sticker_attempt(rng: &mut Rng) -> Sprite {
    let w = rng.random_range(48..=96usize);
    let h = ((w as f32 * rng.random_range(0.75..=1.0f32)).round() as usize).max(32);
    let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
    let (rx, ry) = (cx - 1.0, cy - 1.0);
    let rmin = rx.min(ry);
    let base = match rng.random_range(0..3) {
        0 => Shape::Ellipse {
            cx,
            cy,
            rx,
            ry,
            rot: 0.0,
        },
        1 => Shape::Superellipse {
            cx,
            cy,
            rx,
            ry,
            p: rng.random_range(2.5..5.0),
        },
        _ => Shape::Polygon {
            cx,
            cy,
            radius: rmin,
            sides: rng.random_range(5..=8),
            rot: rng.random_range(0.0..TAU),
            round: rmin * rng.random_range(0.1..0.3),
        },
    };
    let regions = rng.random_range(2..=4usize);
    let border = regions > 2 && rng.random_bool(0.4);
    let features = regions - 1 - usize::from(border);

    let mut colors = vec![random_color(rng)];
    let mut layers = vec![Layer::plain(base, colors[0])];
    for _ in 0..features {
        let color = distinct_color(rng, &colors);
        colors.push(color);
        match rng.random_range(0..5) {
            0 => {
                let r = 0.12 * rmin * rng.random_range(0.8..1.3f32);
                for side in [-1.0f32, 1.0] {
                    layers.push(Layer::plain(
                        Shape::Ellipse {
                            cx: cx + side * 0.35 * rx,
                            cy: cy - 0.2 * ry,
                            rx: r,
                            ry: r * rng.random_range(1.0..1.5f32),
                            rot: 0.0,
                        },
                        color,
                    ));
                }
            }
            1 => layers.push(Layer {
                shape: Shape::Rect {
                    cx,
                    cy: cy + ry * rng.random_range(-0.4..0.4f32),
                    hw: w as f32,
                    hh: ry * rng.random_range(0.1..0.2f32),
                    rot: rng.random_range(-0.5..0.5f32),
                },
                clip: Some(base),
                hole: None,
                color,
            }),
            2 => layers.push(Layer::plain(base.scaled(rng.random_range(0.3..0.6)), color)),
            3 => {
                let my = cy + 0.05 * ry;
                layers.push(Layer {
                    shape: Shape::Ring {
                        cx,
                        cy: my,
                        outer: 0.5 * rmin,
                        inner: 0.36 * rmin,
                    },
                    clip: Some(Shape::Rect {
                        cx,
                        cy: my + rmin,
                        hw: rmin,
                        hh: rmin,
                        rot: 0.0,
                    }),
                    hole: None,
                    color,
                });
            }
            _ => {
                let a = rng.random_range(0.0..TAU);
                let d = rng.random_range(0.0..0.5f32);
                let r = rmin * rng.random_range(0.12..0.25f32);
                layers.push(Layer {
                    shape: Shape::Ellipse {
                        cx: cx + d * rx * a.cos(),
                        cy: cy + d * ry * a.sin(),
                        rx: r,
                        ry: r,
                        rot: 0.0,
                    },
                    clip: Some(base),
                    hole: None,
                    color,
                });
            }
        }
    }
    if border {
        let color = distinct_color(rng, &colors);
        layers.push(Layer {
            shape: base,
            clip: None,
            hole: Some(base.scaled(1.0 - rng.random_range(0.08..0.15))),
            color,
        });
    }
    trim_to_alpha(&rasterize(h, w, &layers))
}

fn logo(rng: &mut Rng) -> Sprite {
    loop {
        let sprite = logo_attempt(rng);
        if opaque_colors(&sprite) >= 2 {
            return sprite;
        }
    }
}

fn opaque_colors(sprite: &Sprite) -> usize {
    let mut seen: Vec<[u32; 3]> = Vec::new();
    for p in sprite.rgba().chunks_exact(4).filter(|p| p[3] == 1.0) {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        if !seen.contains(&key) {
            seen.push(key);
            if seen.len() >= 2 {
                break;
            }
        }
    }
    seen.len()
}

fn logo_attempt(rng: &mut Rng) -> Sprite {
    let w = rng.random_range(64..=96usize);
    let h = ((w as f32 * rng.random_range(0.6..=1.0f32)).round() as usize).max(40);
    let (wf, hf) = (w as f32, h as f32);
    let n = rng.random_range(2..=5usize);
    let mut colors: Vec<[f32; 3]> = Vec::new();
    let mut layers = Vec::new();
    let mut prev: Option<((f32, f32), f32)> = None;
    for _ in 0..n {
        let (cx, cy) = match prev {
            None => (wf / 2.0, hf / 2.0),
            Some(((px, py), size)) => {
                let a = rng.random_range(0.0..TAU);
                let d = size * rng.random_range(0.2..0.7f32);
                (
                    (px + d * a.cos()).clamp(0.3 * wf, 0.7 * wf),
                    (py + d * a.sin()).clamp(0.3 * hf, 0.7 * hf),
                )
            }
        };
        let room = cx.min(wf - cx).min(cy).min(hf - cy) - 1.0;
        let size = (wf.min(hf) * rng.random_range(0.2..0.4f32)).min(room).max(3.0);
        let rot = rng.random_range(0.0..TAU);
        let shape = match rng.random_range(0..5) {
            0 => Shape::Rect {
                cx,
                cy,
                hw: size,
                hh: size * rng.random_range(0.3..1.0f32),
                rot,
            },
            1 => Shape::Ellipse {
                cx,
                cy,
                rx: size,
                ry: size * rng.random_range(0.5..1.0f32),
                rot,
            },
            2 => Shape::Triangle(std::array::from_fn(|i| {
                let a = rot + TAU * i as f32 / 3.0 + rng.random_range(-0.3..0.3f32);
                (cx + size * a.cos(), cy + size * a.sin())
            })),
            3 => Shape::Ring {
                cx,
                cy,
                outer: size,
                inner: size * rng.random_range(0.45..0.7f32),
            },
            _ => Shape::Polygon {
                cx,
                cy,
                radius: size,
                sides: rng.random_range(3..=6),
                rot,
                round: 0.0,
            },
        };
        let color = distinct_color(rng, &colors);
        colors.push(color);
        layers.push(Layer::plain(shape, color));
        prev = Some(((cx, cy), size));
    }
    trim_to_alpha(&rasterize(h, w, &layers))
}

/// Stroke width in pixels for a width ratio relative to the shorter side.
pub fn line_width_px(ratio: f64, height: usize, width: usize) -> usize {
    ((ratio * height.min(width) as f64).round() as usize).max(1)
}

fn snap(v: f32, stroke: usize) -> f32 {
    if stroke % 2 == 1 {
        v.floor() + 0.5
    } else {
        v.round()
    }
}

/// A straight or quadratic-Bézier stroke of `stroke` pixels with hard alpha,
/// laid out on a random sub-canvas of an image of size `bounds`.
pub fn render_line(stroke: usize, bounds: (usize, usize), rng: &mut Rng) -> Sprite {
    let (bh, bw) = bounds;
    let side = |full: usize, rng: &mut Rng| {
        let s = (full as f32 * rng.random_range(0.3..=1.0f32)).round() as usize;
        s.max(stroke + 2).min(full.max(stroke + 2))
    };
    let (ch, cw) = (side(bh, rng), side(bw, rng));
    let m = stroke as f32 / 2.0 + 0.5;
    let point = |rng: &mut Rng| {
        let x = if cw as f32 > 2.0 * m {
            rng.random_range(m..=cw as f32 - m)
        } else {
            cw as f32 / 2.0
        };
        let y = if ch as f32 > 2.0 * m {
            rng.random_range(m..=ch as f32 - m)
        } else {
            ch as f32 / 2.0
        };
        (snap(x, stroke), snap(y, stroke))
    };
    let min_len = 0.4 * cw.max(ch) as f32;
    let (mut p0, mut p2) = (point(rng), point(rng));
    for _ in 0..16 {
        if ((p0.0 - p2.0).powi(2) + (p0.1 - p2.1).powi(2)).sqrt() >= min_len {
            break;
        }
        p0 = point(rng);
        p2 = point(rng);
    }
    let p1 = if rng.random_bool(0.5) {
        point(rng)
    } else {
        ((p0.0 + p2.0) / 2.0, (p0.1 + p2.1) / 2.0)
    };
    let color = random_color(rng);
    let est = ((p1.0 - p0.0).hypot(p1.1 - p0.1) + (p2.0 - p1.0).hypot(p2.1 - p1.1)).ceil();
    let steps = (est as usize).max(2);
    let pts: Vec<(f32, f32)> = (0..=steps)
        .map(|i| {
            let t = i as f32 / steps as f32;
            let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * (1.0 - t) * t, t * t);
            (
                a * p0.0 + b * p1.0 + c * p2.0,
                a * p0.1 + b * p1.1 + c * p2.1,
            )
        })
        .collect();
    let r = stroke as f32 / 2.0;
    let mut sprite = Sprite::transparent(ch, cw);
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let y0 = (a.1.min(b.1) - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + r + 1.0).ceil() as usize).min(ch);
        let x0 = (a.0.min(b.0) - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r + 1.0).ceil() as usize).min(cw);
        for y in y0..y1 {
            for x in x0..x1 {
                if segment_distance((x as f32 + 0.5, y as f32 + 0.5), a, b) < r {
                    sprite.set(y, x, [color[0], color[1], color[2], 1.0]);
                }
            }
        }
    }
    trim_to_alpha(&sprite)
}

/// Grid geometry of a rendered text block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TextLayout {
    pub glyph_px: usize,
    pub chars: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Random characters from the bitmap font with glyph width
/// `round(glyph_ratio·W)`, as many (≤ 12) as approximate a bounding box of
/// `bbox_fraction` of the image area. Hard alpha, one flat colour.
pub fn render_text(
    glyph_ratio: f64,
    bbox_fraction: f64,
    bounds: (usize, usize),
    rng: &mut Rng,
) -> (Sprite, TextLayout) {
    let (bh, bw) = bounds;
    let mut gw = ((glyph_ratio * bw as f64).round() as usize).clamp(1, bw);
    let glyph_h = |gw: usize| ((gw * GLYPH_ROWS) as f64 / GLYPH_COLS as f64).round().max(1.0) as usize;
    while gw > 1 && glyph_h(gw) > bh {
        gw -= 1;
    }
    let gh = glyph_h(gw);
    let sp = ((gw as f64 / GLYPH_COLS as f64).round() as usize).max(1);
    let cell = ((gw + sp) * (gh + sp)) as f64;
    let max_cols = ((bw + sp) / (gw + sp)).max(1);
    let max_rows = ((bh + sp) / (gh + sp)).max(1);
    let chars = ((bbox_fraction * (bh * bw) as f64 / cell).round() as usize)
        .clamp(1, 12)
        .min(max_cols * max_rows);
    let options: Vec<usize> = (1..=max_rows)
        .filter(|r| chars.div_ceil(*r) <= max_cols && *r <= chars)
        .collect();
    let rows = *options.choose(rng).expect("one row always fits");
    let cols = chars.div_ceil(rows);
    let color = random_color(rng);
    let charset: Vec<char> = font::charset().collect();
    let height = rows * (gh + sp) - sp;
    let width = cols * (gw + sp) - sp;
    loop {
        let mut sprite = Sprite::transparent(height, width);
        let mut inked = false;
        for i in 0..chars {
            let rows_bits = font::glyph(*charset.choose(rng).expect("charset non-empty"))
                .expect("charset glyph");
            let (oy, ox) = ((i / cols) * (gh + sp), (i % cols) * (gw + sp));
            for py in 0..gh {
                for px in 0..gw {
                    if font::ink(rows_bits, py * GLYPH_ROWS / gh, px * GLYPH_COLS / gw) {
                        sprite.set(oy + py, ox + px, [color[0], color[1], color[2], 1.0]);
                        inked = true;
                    }
                }
            }
        }
        if inked {
            let layout = TextLayout {
                glyph_px: gw,
                chars,
                rows,
                cols,
            };
            return (sprite, layout);
        }
    }
}
