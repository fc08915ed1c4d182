use rand::Rng as _;

use super::pattern::{line_width_px, render_line, render_text, PatternSource};
use super::{Category, PatternRecord, Placement, SampleManifest, SynthSample, SynthesisConfig};
use crate::error::{Error, Result};
use crate::imgproc::{
    adjust_attributes, compute_stats, jpeg_degrade, AdjustMode, BinaryMask, Image, Rect, Sprite,
};
use crate::rng::Rng;

/// Smallest side a resized coverage pattern may have.
const MIN_PATTERN_SIDE: usize = 3;
const MAX_PLAN_ATTEMPTS: usize = 16;
/// Local statistics window: the pattern bbox grown by this fraction per side.
const WINDOW_DILATION: f64 = 0.25;
const STRENGTH_RANGE: (f32, f32) = (0.3, 0.8);

struct Sized {
    sprite: Sprite,
    size_parameter: f64,
    bbox_fraction: Option<f64>,
}

struct Plan {
    patterns: Vec<Sized>,
    total_area: Option<f64>,
}

/// Downscale by repeated 2×2 averaging, then one bilinear step.
fn shrink(sprite: &Sprite, height: usize, width: usize) -> Result<Sprite> {
    let mut cur = sprite.clone();
    while cur.height() / 2 >= height && cur.width() / 2 >= width && cur.height() >= 2 {
        cur = cur.resized(cur.height() / 2, cur.width() / 2)?;
    }
    if (cur.height(), cur.width()) == (height, width) {
        Ok(cur)
    } else {
        cur.resized(height, width)
    }
}

/// Resize so that the alpha>0.5 footprint approximates `target_px` pixels,
/// never exceeding the image.
fn size_to_coverage(sprite: &Sprite, target_px: f64, bounds: (usize, usize)) -> Result<Sprite> {
    let c0 = sprite.coverage() as f64;
    if c0 == 0.0 {
        return Err(Error::Synthesis("pattern has no opaque pixels".into()));
    }
    let (sh, sw) = (sprite.height() as f64, sprite.width() as f64);
    let fit = (bounds.0 as f64 / sh).min(bounds.1 as f64 / sw);
    let mut scale = (target_px / c0).sqrt();
    let mut best: Option<(f64, Sprite)> = None;
    for _ in 0..4 {
        scale = scale.min(fit);
        let nh = ((sh * scale).round() as usize).min(bounds.0);
        let nw = ((sw * scale).round() as usize).min(bounds.1);
        if nh < MIN_PATTERN_SIDE || nw < MIN_PATTERN_SIDE {
            return Err(Error::Synthesis(format!(
                "pattern would be resized to {nh}×{nw}, below {MIN_PATTERN_SIDE}×{MIN_PATTERN_SIDE}"
            )));
        }
        let out = if scale < 1.0 {
            shrink(sprite, nh, nw)?
        } else {
            sprite.resized(nh, nw)?
        };
        let c = out.coverage() as f64;
        let err = (c - target_px).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, out));
        }
        if err <= 0.02 * target_px || scale >= fit {
            break;
        }
        scale *= if c > 0.0 { (target_px / c).sqrt() } else { 1.5 };
    }
    let (_, sprite) = best.expect("at least one attempt");
    if sprite.coverage() == 0 {
        return Err(Error::Synthesis("resized pattern lost all opaque pixels".into()));
    }
    Ok(sprite)
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn plan(
    source: &dyn PatternSource,
    config: &SynthesisConfig,
    bounds: (usize, usize),
    rng: &mut Rng,
) -> Result<Plan> {
    let (h, w) = bounds;
    let k = rng.random_range(config.count_range.0..=config.count_range.1) as usize;
    match config.category {
        Category::Sticker | Category::Logo => {
            let total = uniform(rng, config.area_range);
            let weights: Vec<f64> = (0..k).map(|_| 1.0 - rng.random::<f64>()).collect();
            let sum: f64 = weights.iter().sum();
            let mut patterns = Vec::with_capacity(k);
            for wgt in weights {
                let share = total * wgt / sum;
                let pattern = source.draw(config.category, rng)?;
                let sprite = size_to_coverage(&pattern.sprite, share * (h * w) as f64, bounds)?;
                patterns.push(Sized {
                    sprite,
                    size_parameter: share,
                    bbox_fraction: None,
                });
            }
            Ok(Plan {
                patterns,
                total_area: Some(total),
            })
        }
        Category::Line => {
            let patterns = (0..k)
                .map(|_| {
                    let ratio = uniform(rng, config.area_range);
                    let sprite = render_line(line_width_px(ratio, h, w), bounds, rng);
                    Sized {
                        sprite,
                        size_parameter: ratio,
                        bbox_fraction: None,
                    }
                })
                .collect();
            Ok(Plan {
                patterns,
                total_area: None,
            })
        }
        Category::Text => {
            let bbox_range = config
                .bbox_range
                .ok_or_else(|| Error::config("bbox_range", "text synthesis needs a bbox range"))?;
            let patterns = (0..k)
                .map(|_| {
                    let glyph = uniform(rng, config.area_range);
                    let bbox = uniform(rng, bbox_range);
                    let (sprite, _) = render_text(glyph, bbox, bounds, rng);
                    let fraction = sprite.height() * sprite.width();
                    Sized {
                        sprite,
                        size_parameter: glyph,
                        bbox_fraction: Some(fraction as f64 / (h * w) as f64),
                    }
                })
                .collect();
            Ok(Plan {
                patterns,
                total_area: None,
            })
        }
    }
}

/// Alpha-composite `sprite` at `rect` and add its alpha>0.5 footprint to `mask`.
fn composite(canvas: &mut Image, mask: &mut BinaryMask, sprite: &Sprite, rect: Rect) {
    for y in 0..rect.height {
        for x in 0..rect.width {
            let [r, g, b, a] = sprite.get(y, x);
            if a <= 0.0 {
                continue;
            }
            let (iy, ix) = (rect.y + y, rect.x + x);
            let bg = canvas.get(iy, ix);
            let fg = [r, g, b];
            let mut out = [0.0f32; 3];
            for c in 0..3 {
                out[c] = a * fg[c] + (1.0 - a) * bg[c];
            }
            canvas.set(iy, ix, out);
            if a > 0.5 {
                mask.set(iy, ix, true);
            }
        }
    }
}

/// Composite K patterns of `config.category` onto `base` and return the
/// image, its ground-truth mask and a manifest of what was placed.
pub fn synthesize(
    base: &Image,
    source: &dyn PatternSource,
    config: &SynthesisConfig,
    rng: &mut Rng,
) -> Result<SynthSample> {
    config.validate()?;
    let (h, w) = (base.height(), base.width());
    let mut last_err = None;
    let mut planned = None;
    for _ in 0..MAX_PLAN_ATTEMPTS {
        match plan(source, config, (h, w), rng) {
            Ok(p) => {
                planned = Some(p);
                break;
            }
            Err(Error::Synthesis(msg)) => last_err = Some(msg),
            Err(e) => return Err(e),
        }
    }
    let plan = planned.ok_or_else(|| {
        Error::Synthesis(format!(
            "no feasible pattern split after {MAX_PLAN_ATTEMPTS} attempts: {}",
            last_err.unwrap_or_default()
        ))
    })?;

    let mut canvas = base.clone();
    let mut mask = BinaryMask::zeros(h, w);
    let mut records = Vec::with_capacity(plan.patterns.len());
    let mut placements = Vec::with_capacity(plan.patterns.len());
    for sized in plan.patterns {
        let (sh, sw) = (sized.sprite.height(), sized.sprite.width());
        let rect = Rect {
            y: rng.random_range(0..=h - sh),
            x: rng.random_range(0..=w - sw),
            height: sh,
            width: sw,
        };
        let (sprite, mode) = if config.align_attributes {
            let window = rect.dilated(WINDOW_DILATION, h, w);
            let stats = compute_stats(&canvas, Some(window))
                .or_else(|_| compute_stats(&canvas, None))?;
            let mode = if rng.random_bool(config.match_probability) {
                AdjustMode::Match
            } else {
                AdjustMode::Mismatch
            };
            let strength = rng.random_range(STRENGTH_RANGE.0..=STRENGTH_RANGE.1);
            (
                adjust_attributes(&sized.sprite, &stats, mode, strength, rng)?,
                Some(mode),
            )
        } else {
            (sized.sprite, None)
        };
        composite(&mut canvas, &mut mask, &sprite, rect);
        records.push(PatternRecord {
            category: config.category,
            bbox: rect,
            area_fraction: sprite.coverage() as f64 / (h * w) as f64,
            size_parameter: sized.size_parameter,
            bbox_fraction: sized.bbox_fraction,
            attribute_mode: mode,
        });
        placements.push(Placement { rect, sprite });
    }

    let jpeg_quality = config
        .jpeg_quality_range
        .map(|(lo, hi)| rng.random_range(lo..=hi));
    let image = match jpeg_quality {
        Some(q) => jpeg_degrade(&canvas, q)?,
        None => canvas,
    };
    Ok(SynthSample {
        image,
        mask,
        manifest: SampleManifest {
            category: config.category,
            size_level: config.size_level,
            total_area: plan.total_area,
            jpeg_quality,
            patterns: records,
        },
        placements,
    })
}
