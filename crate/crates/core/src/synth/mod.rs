//! Procedural graphics patterns and on-the-fly (image, mask) synthesis.
//!
//! A sample is built by drawing K patterns of one category, sizing them by
//! that category's size rule, optionally aligning their colour attributes
//! with the paste location, alpha-compositing them onto a base image and
//! finally passing the result through simulated JPEG.

mod background;
mod compose;
pub mod font;
mod pattern;
mod stream;
mod testset;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{AdjustMode, BinaryMask, Image, Rect, Sprite};

pub use background::{crop_resize, procedural_background, BaseImages};
pub use compose::synthesize;
pub use pattern::{
    generate_pattern, line_width_px, render_line, render_text, trim_to_alpha, PatternSource,
    Procedural, SpriteLibrary, TextLayout,
};
pub use stream::{DataConfig, SampleStream};
pub use testset::{build_test_set, load_test_set, TestCell, TestGrid, TestManifest, TestSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Sticker,
    Line,
    Text,
    Logo,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Sticker,
        Category::Line,
        Category::Text,
        Category::Logo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Sticker => "sticker",
            Category::Line => "line",
            Category::Text => "text",
            Category::Logo => "logo",
        }
    }

    /// Stickers and logos are sized by the fraction of pixels they cover.
    pub fn is_coverage_sized(self) -> bool {
        matches!(self, Category::Sticker | Category::Logo)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown pattern category '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeLevel {
    Small,
    Medium,
    Large,
}

impl SizeLevel {
    pub const ALL: [SizeLevel; 3] = [SizeLevel::Small, SizeLevel::Medium, SizeLevel::Large];

    pub fn name(self) -> &'static str {
        match self {
            SizeLevel::Small => "small",
            SizeLevel::Medium => "medium",
            SizeLevel::Large => "large",
        }
    }
}

impl fmt::Display for SizeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SizeLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SizeLevel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown size level '{s}'")))
    }
}

/// An RGBA pattern before sizing and placement.
#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub sprite: Sprite,
    pub category: Category,
}

impl Pattern {
    pub fn native_size(&self) -> (usize, usize) {
        (self.sprite.height(), self.sprite.width())
    }
}

/// Parameters of one synthesis cell.
///
/// `area_range` is the range of the category's size parameter: total
/// coverage fraction for stickers and logos, stroke width over the shorter
/// image side for lines, glyph width over image width for text. Text also
/// draws its bounding-box area fraction from `bbox_range`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub category: Category,
    pub size_level: SizeLevel,
    pub area_range: (f64, f64),
    #[serde(default)]
    pub bbox_range: Option<(f64, f64)>,
    pub count_range: (u32, u32),
    #[serde(default = "default_match_probability")]
    pub match_probability: f64,
    #[serde(default = "default_true")]
    pub align_attributes: bool,
    #[serde(default = "default_jpeg")]
    pub jpeg_quality_range: Option<(u8, u8)>,
    #[serde(default)]
    pub seed: u64,
}

fn default_match_probability() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_jpeg() -> Option<(u8, u8)> {
    Some((70, 100))
}

impl SynthesisConfig {
    /// The size-taxonomy cell for `category` at `size_level`.
    pub fn standard(category: Category, size_level: SizeLevel) -> Self {
        use Category::*;
        use SizeLevel::*;
        let (area_range, bbox_range, count_range) = match (category, size_level) {
            (Sticker | Logo, Small) => ((0.001, 0.016), None, (1, 2)),
            (Sticker | Logo, Medium) => ((0.016, 0.064), None, (1, 4)),
            (Sticker | Logo, Large) => ((0.064, 0.4), None, (1, 12)),
            (Line, Small) => ((0.008, 0.02), None, (1, 10)),
            (Line, Medium) => ((0.02, 0.06), None, (1, 10)),
            (Line, Large) => ((0.06, 0.15), None, (1, 6)),
            (Text, Small) => ((0.05, 0.1), Some((0.002, 0.016)), (1, 1)),
            (Text, Medium) => ((0.1, 0.2), Some((0.016, 0.25)), (1, 1)),
            (Text, Large) => ((0.15, 0.4), Some((0.25, 0.6)), (1, 1)),
        };
        Self {
            category,
            size_level,
            area_range,
            bbox_range,
            count_range,
            match_probability: default_match_probability(),
            align_attributes: true,
            jpeg_quality_range: default_jpeg(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.6) {
            return Err(Error::config(
                "area_range",
                format!("need 0 < lo ≤ hi ≤ 0.6, got ({lo}, {hi})"),
            ));
        }
        if let Some((lo, hi)) = self.bbox_range {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::config(
                    "bbox_range",
                    format!("need 0 < lo ≤ hi ≤ 1, got ({lo}, {hi})"),
                ));
            }
        }
        if self.category == Category::Text && self.bbox_range.is_none() {
            return Err(Error::config("bbox_range", "text synthesis needs a bbox range"));
        }
        let (cmin, cmax) = self.count_range;
        if cmin < 1 || cmin > cmax {
            return Err(Error::config(
                "count_range",
                format!("need 1 ≤ min ≤ max, got ({cmin}, {cmax})"),
            ));
        }
        if !(0.0..=1.0).contains(&self.match_probability) {
            return Err(Error::config(
                "match_probability",
                format!("{} is not a probability", self.match_probability),
            ));
        }
        if let Some((qlo, qhi)) = self.jpeg_quality_range {
            if qlo < 1 || qlo > qhi || qhi > 100 {
                return Err(Error::config(
                    "jpeg_quality_range",
                    format!("need 1 ≤ lo ≤ hi ≤ 100, got ({qlo}, {qhi})"),
                ));
            }
        }
        Ok(())
    }
}

/// Manifest entry for one placed pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub category: Category,
    pub bbox: Rect,
    /// Fraction of image pixels where this pattern's alpha exceeds one half.
    pub area_fraction: f64,
    /// Drawn size parameter: this pattern's coverage share, stroke-width
    /// ratio or glyph-width ratio depending on the category.
    pub size_parameter: f64,
    /// Text only: bounding-box area over image area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_fraction: Option<f64>,
    /// `None` when attributes were left untouched.
    pub attribute_mode: Option<AdjustMode>,
}

/// Manifest of one synthesized sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub category: Category,
    pub size_level: SizeLevel,
    /// Drawn total coverage for coverage-sized categories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_area: Option<f64>,
    pub jpeg_quality: Option<u8>,
    pub patterns: Vec<PatternRecord>,
}

/// A final sprite and where it was composited.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub rect: Rect,
    pub sprite: Sprite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: Image,
    pub mask: BinaryMask,
    pub manifest: SampleManifest,
    pub placements: Vec<Placement>,
}
