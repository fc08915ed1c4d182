//! Seeded, index-addressable stream of training samples.

use std::path::PathBuf;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::background::BaseImages;
use super::compose::synthesize;
use super::pattern::{PatternSource, Procedural, SpriteLibrary};
use super::{Category, SizeLevel, SynthSample, SynthesisConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, stream_tag};

const MAX_SAMPLE_ATTEMPTS: usize = 8;

/// Training-data distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_categories")]
    pub categories: Vec<Category>,
    /// Mixture weights of the small, medium and large size cells.
    #[serde(default = "default_size_weights")]
    pub size_weights: [f64; 3],
    #[serde(default = "default_match_probability")]
    pub match_probability: f64,
    #[serde(default = "default_true")]
    pub align_attributes: bool,
    #[serde(default = "default_jpeg")]
    pub jpeg_quality_range: Option<(u8, u8)>,
    /// Directory of PNG base photos; procedural backgrounds when absent.
    #[serde(default)]
    pub base_dir: Option<PathBuf>,
    /// Whether procedural backgrounds carry blob distractors.
    #[serde(default = "default_true")]
    pub clutter: bool,
    /// Directory of RGBA PNG sprites for stickers and logos.
    #[serde(default)]
    pub sprite_dir: Option<PathBuf>,
}

fn default_resolution() -> usize {
    256
}

fn default_categories() -> Vec<Category> {
    Category::ALL.to_vec()
}

fn default_size_weights() -> [f64; 3] {
    [0.5, 0.3, 0.2]
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

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
            categories: default_categories(),
            size_weights: default_size_weights(),
            match_probability: default_match_probability(),
            align_attributes: true,
            jpeg_quality_range: default_jpeg(),
            base_dir: None,
            clutter: true,
            sprite_dir: None,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::config("resolution", "must be at least 8"));
        }
        if self.categories.is_empty() {
            return Err(Error::config("categories", "at least one category is required"));
        }
        if self.size_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.size_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::config(
                "size_weights",
                "weights must be non-negative with a positive sum",
            ));
        }
        // Everything else is checked per cell.
        self.cell(self.categories[0], SizeLevel::Small).validate()
    }

    /// The synthesis cell for one (category, size level) draw.
    pub fn cell(&self, category: Category, size_level: SizeLevel) -> SynthesisConfig {
        SynthesisConfig {
            match_probability: self.match_probability,
            align_attributes: self.align_attributes,
            jpeg_quality_range: self.jpeg_quality_range,
            ..SynthesisConfig::standard(category, size_level)
        }
    }
}

/// Sample `i` depends only on `(seed, i)`, so index ranges can be handed to
/// independent workers.
pub struct SampleStream {
    config: DataConfig,
    seed: u64,
    bases: BaseImages,
    source: Box<dyn PatternSource>,
    sizes: WeightedIndex<f64>,
}

impl SampleStream {
    /// Load the base/sprite directories named in `config`, if any.
    pub fn new(config: DataConfig, seed: u64) -> Result<Self> {
        let bases = match &config.base_dir {
            Some(dir) => BaseImages::load_dir(dir)?,
            None if config.clutter => BaseImages::Procedural,
            None => BaseImages::Smooth,
        };
        let source: Box<dyn PatternSource> = match &config.sprite_dir {
            Some(dir) => Box::new(SpriteLibrary::load_dir(dir)?),
            None => Box::new(Procedural),
        };
        Self::with_sources(config, seed, bases, source)
    }

    pub fn with_sources(
        config: DataConfig,
        seed: u64,
        bases: BaseImages,
        source: Box<dyn PatternSource>,
    ) -> Result<Self> {
        config.validate()?;
        let sizes = WeightedIndex::new(config.size_weights)
            .map_err(|e| Error::config("size_weights", e.to_string()))?;
        Ok(Self {
            config,
            seed,
            bases,
            source,
            sizes,
        })
    }

    pub fn config(&self) -> &DataConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&self, index: u64) -> Result<SynthSample> {
        let mut rng = rng_for(self.seed, "train-sample", index);
        let category = *self
            .config
            .categories
            .choose(&mut rng)
            .expect("validated non-empty");
        let size = SizeLevel::ALL[self.sizes.sample(&mut rng)];
        let mut cell = self.config.cell(category, size);
        cell.seed = derive_seed(self.seed, stream_tag("train-sample"), index);
        let res = self.config.resolution;
        let mut last = None;
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let base = self.bases.draw(res, res, &mut rng)?;
            match synthesize(&base, self.source.as_ref(), &cell, &mut rng) {
                Ok(s) => return Ok(s),
                Err(Error::Synthesis(msg)) => last = Some(msg),
                Err(e) => return Err(e),
            }
        }
        Err(Error::Synthesis(format!(
            "sample {index} ({category}/{size}) failed {MAX_SAMPLE_ATTEMPTS} times: {}",
            last.unwrap_or_default()
        )))
    }

    /// Samples `start..start+count`.
    pub fn batch(&self, start: u64, count: usize) -> Result<Vec<SynthSample>> {
        (start..start + count as u64).map(|i| self.sample(i)).collect()
    }
}
