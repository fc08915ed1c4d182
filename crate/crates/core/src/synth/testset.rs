//! Materialised test sets: one directory per (category, size level) cell.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::background::BaseImages;
use super::compose::synthesize;
use super::pattern::PatternSource;
use super::{Category, SampleManifest, SizeLevel, SynthesisConfig};
use crate::error::{Error, Result};
use crate::imgproc::io::{load_image, load_mask, save_image, save_mask};
use crate::imgproc::{BinaryMask, Image};
use crate::rng::rng_for;

const MAX_SAMPLE_ATTEMPTS: usize = 8;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Which cells to build and how many images each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestGrid {
    #[serde(default = "all_categories")]
    pub categories: Vec<Category>,
    #[serde(default = "all_sizes")]
    pub sizes: Vec<SizeLevel>,
    pub per_cell: usize,
    pub resolution: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jpeg")]
    pub jpeg_quality_range: Option<(u8, u8)>,
    /// Replace the standard per-cell ranges when set.
    #[serde(default)]
    pub area_range: Option<(f64, f64)>,
    #[serde(default)]
    pub bbox_range: Option<(f64, f64)>,
    #[serde(default)]
    pub count_range: Option<(u32, u32)>,
}

fn all_categories() -> Vec<Category> {
    Category::ALL.to_vec()
}

fn all_sizes() -> Vec<SizeLevel> {
    SizeLevel::ALL.to_vec()
}

fn default_jpeg() -> Option<(u8, u8)> {
    Some((70, 100))
}

impl TestGrid {
    /// Test cells never align pattern attributes with the background.
    pub fn new(per_cell: usize, resolution: usize, seed: u64) -> Self {
        Self {
            categories: all_categories(),
            sizes: all_sizes(),
            per_cell,
            resolution,
            seed,
            jpeg_quality_range: default_jpeg(),
            area_range: None,
            bbox_range: None,
            count_range: None,
        }
    }

    pub fn cell(&self, category: Category, size_level: SizeLevel) -> SynthesisConfig {
        let mut cfg = SynthesisConfig {
            align_attributes: false,
            jpeg_quality_range: self.jpeg_quality_range,
            seed: self.seed,
            ..SynthesisConfig::standard(category, size_level)
        };
        if let Some(r) = self.area_range {
            cfg.area_range = r;
        }
        if self.bbox_range.is_some() {
            cfg.bbox_range = self.bbox_range;
        }
        if let Some(r) = self.count_range {
            cfg.count_range = r;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::config("resolution", "must be at least 8"));
        }
        if self.categories.is_empty() || self.sizes.is_empty() {
            return Err(Error::config("categories", "at least one cell is required"));
        }
        for &c in &self.categories {
            for &s in &self.sizes {
                self.cell(c, s).validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSample {
    pub index: usize,
    /// Paths relative to the test-set root.
    pub image: String,
    pub mask: String,
    pub manifest: SampleManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCell {
    pub category: Category,
    pub size_level: SizeLevel,
    pub config: SynthesisConfig,
    pub samples: Vec<TestSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestManifest {
    pub seed: u64,
    pub resolution: usize,
    pub cells: Vec<TestCell>,
}

impl TestManifest {
    pub fn len(&self) -> usize {
        self.cells.iter().map(|c| c.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_sample(&self, root: &Path, sample: &TestSample) -> Result<(Image, BinaryMask)> {
        Ok((
            load_image(&root.join(&sample.image))?,
            load_mask(&root.join(&sample.mask))?,
        ))
    }
}

/// Synthesize `grid.per_cell` images per cell into
/// `out_dir/<category>/<size>/<index>.png` (+ `<index>_mask.png`) and
/// write `manifest.json` at the root. Samples are synthesised on the
/// current rayon pool; each depends only on its own seed stream.
pub fn build_test_set(
    bases: &BaseImages,
    source: &dyn PatternSource,
    out_dir: &Path,
    grid: &TestGrid,
) -> Result<TestManifest> {
    grid.validate()?;
    let mut cells = Vec::new();
    for &category in &grid.categories {
        for &size_level in &grid.sizes {
            let config = grid.cell(category, size_level);
            let rel_dir = format!("{category}/{size_level}");
            let dir = out_dir.join(&rel_dir);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let stream = format!("test/{category}/{size_level}");
            let samples = (0..grid.per_cell)
                .into_par_iter()
                .map(|index| {
                    let mut rng = rng_for(grid.seed, &stream, index as u64);
                    let mut result = None;
                    let mut last = String::new();
                    for _ in 0..MAX_SAMPLE_ATTEMPTS {
                        let base = bases.draw(grid.resolution, grid.resolution, &mut rng)?;
                        match synthesize(&base, source, &config, &mut rng) {
                            Ok(s) => {
                                result = Some(s);
                                break;
                            }
                            Err(Error::Synthesis(msg)) => last = msg,
                            Err(e) => return Err(e),
                        }
                    }
                    let sample = result.ok_or_else(|| {
                        Error::Synthesis(format!("{rel_dir} sample {index}: {last}"))
                    })?;
                    let image = format!("{rel_dir}/{index}.png");
                    let mask = format!("{rel_dir}/{index}_mask.png");
                    save_image(&out_dir.join(&image), &sample.image)?;
                    save_mask(&out_dir.join(&mask), &sample.mask)?;
                    Ok(TestSample {
                        index,
                        image,
                        mask,
                        manifest: sample.manifest,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(TestCell {
                category,
                size_level,
                config,
                samples,
            });
        }
    }
    let manifest = TestManifest {
        seed: grid.seed,
        resolution: grid.resolution,
        cells,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_test_set(root: &Path) -> Result<TestManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}
