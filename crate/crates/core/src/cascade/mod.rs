//! Coarse-to-fine cascade of per-scale segmentation sub-networks.
//!
//! Level ℓ (0 = coarsest) sees the image at scale 1/σ_ℓ. Its backbone maps
//! the image, concatenated with the upsampled features of level ℓ−1, to C
//! feature channels; its head maps the features to a one-channel mask. The
//! cumulative mask of level ℓ is the full-resolution product of the upsampled
//! masks of levels 0..=ℓ, so a pixel survives only if every level keeps it.

mod model_io;

use std::ops::Range;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{build_pyramid, pyramid_sizes, BinaryMask, Image, ScalePyramid, SoftMask};
use crate::rng::rng_for;
use crate::tensor::{Element, Tape, Tensor, Var};

pub use model_io::{load_model, save_model, ModelManifest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_sigma_step")]
    pub sigma_step: f64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Residual blocks per backbone.
    #[serde(default = "default_resblocks")]
    pub resblocks: usize,
    /// Per-level override of `resblocks`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_resblocks: Option<Vec<usize>>,
    /// Training/inference input side.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_levels() -> usize {
    3
}

fn default_sigma_step() -> f64 {
    std::f64::consts::SQRT_2
}

fn default_channels() -> usize {
    16
}

fn default_resblocks() -> usize {
    4
}

fn default_resolution() -> usize {
    256
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            sigma_step: default_sigma_step(),
            channels: default_channels(),
            resblocks: default_resblocks(),
            level_resblocks: None,
            resolution: default_resolution(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("levels", "need at least one level"));
        }
        if !(self.sigma_step > 1.0 && self.sigma_step.is_finite()) {
            return Err(Error::config("sigma_step", "must be a finite value above 1"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels", "must be positive"));
        }
        if let Some(per) = &self.level_resblocks {
            if per.len() != self.levels {
                return Err(Error::config(
                    "level_resblocks",
                    format!("{} entries for {} levels", per.len(), self.levels),
                ));
            }
        }
        let sizes = pyramid_sizes(self.resolution, self.resolution, self.levels, self.sigma_step);
        if sizes[0].0 < 8 || sizes[0].1 < 8 {
            return Err(Error::config(
                "resolution",
                format!(
                    "coarsest level of a {0}×{0} input would be {1}×{2}, below 8×8",
                    self.resolution, sizes[0].0, sizes[0].1
                ),
            ));
        }
        Ok(())
    }

    pub fn resblocks_at(&self, level: usize) -> usize {
        self.level_resblocks
            .as_ref()
            .map_or(self.resblocks, |per| per[level])
    }

    pub fn head_channels(&self) -> usize {
        (self.channels / 2).max(1)
    }

    /// Input channels of level `level`'s entry convolution.
    pub fn entry_channels(&self, level: usize) -> usize {
        if level == 0 {
            3
        } else {
            3 + self.channels
        }
    }

    /// Parameter tensor shapes of one level in binding order.
    pub fn level_shapes(&self, level: usize) -> Vec<Vec<usize>> {
        let c = self.channels;
        let ch = self.head_channels();
        let mut shapes = vec![vec![c, self.entry_channels(level), 3, 3], vec![c]];
        for _ in 0..self.resblocks_at(level) {
            for _ in 0..2 {
                shapes.push(vec![c, c, 3, 3]);
                shapes.push(vec![c]);
            }
        }
        shapes.extend([vec![ch, c, 3, 3], vec![ch], vec![1, ch, 1, 1], vec![1]]);
        shapes
    }

    pub fn level_names(&self, level: usize) -> Vec<String> {
        let p = format!("level{level}");
        let mut names = vec![format!("{p}.entry.weight"), format!("{p}.entry.bias")];
        for b in 0..self.resblocks_at(level) {
            for k in 0..2 {
                names.push(format!("{p}.block{b}.conv{k}.weight"));
                names.push(format!("{p}.block{b}.conv{k}.bias"));
            }
        }
        for k in 0..2 {
            names.push(format!("{p}.head{k}.weight"));
            names.push(format!("{p}.head{k}.bias"));
        }
        names
    }

    /// Index range of level `level`'s tensors in the flat parameter list.
    pub fn level_range(&self, level: usize) -> Range<usize> {
        let start: usize = (0..level).map(|l| self.level_shapes(l).len()).sum();
        start..start + self.level_shapes(level).len()
    }

    pub fn scale_factors(&self) -> Vec<f64> {
        crate::imgproc::scale_factors(self.levels, self.sigma_step)
    }
}

/// Initial output-bias of refining levels; sigmoid(3) ≈ 0.953.
pub const PASS_THROUGH_LOGIT: f64 = 3.0;

/// Learnable tensors of a cascade, flat in level order.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel<T = f32> {
    config: ModelConfig,
    params: Vec<Tensor<T>>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct TapeOutput {
    /// Per-level masks, N×1×h_ℓ×w_ℓ.
    pub masks: Vec<Var>,
    /// Per-level backbone features, N×C×h_ℓ×w_ℓ.
    pub features: Vec<Var>,
    /// Cumulative masks at full resolution, N×1×H×W.
    pub cumulative: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeOutput<T = f32> {
    pub per_level_masks: Vec<Tensor<T>>,
    pub per_level_features: Vec<Tensor<T>>,
    pub cumulative_masks: Vec<Tensor<T>>,
}

impl<T: Element> CascadeModel<T> {
    /// He-normal weights, zero biases. The second convolution of every
    /// residual block starts at a quarter of the He scale so that deep
    /// un-normalised stacks begin close to the identity. Heads of levels
    /// after the first start with mask ≈ 0.95, passing the coarser
    /// cumulative mask through almost unchanged.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for level in 0..config.levels {
            let mut rng = rng_for(seed, "model-init", level as u64);
            let names = config.level_names(level);
            for (shape, name) in config.level_shapes(level).into_iter().zip(names) {
                if shape.len() == 1 {
                    let fill = if level > 0 && name.ends_with("head1.bias") {
                        PASS_THROUGH_LOGIT
                    } else {
                        0.0
                    };
                    params.push(Tensor::full(&shape, T::lit(fill)));
                    continue;
                }
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let mut std = (2.0 / fan_in).sqrt();
                if name.ends_with("conv1.weight") {
                    std *= 0.25;
                }
                params.push(Tensor::from_fn(&shape, |_| {
                    T::lit(std * rng.sample::<f64, _>(StandardNormal))
                }));
            }
        }
        Ok(Self { config, params })
    }

    /// Wrap existing tensors; shapes must match the configuration.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<_> = (0..config.levels).flat_map(|l| config.level_shapes(l)).collect();
        if shapes.len() != params.len() {
            return Err(Error::Dimension(format!(
                "model needs {} tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter {i}: expected shape {s:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_levels(&self) -> usize {
        self.config.levels
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn level_params_mut(&mut self, level: usize) -> &mut [Tensor<T>] {
        let r = self.config.level_range(level);
        &mut self.params[r]
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        (0..self.config.levels)
            .flat_map(|l| self.config.level_names(l))
            .zip(&self.params)
            .collect()
    }

    /// Overwrite level `level` with a copy of level `level − 1`, tensor by
    /// tensor where names and shapes line up. The entry convolution keeps the
    /// coarser level's image filters and starts with zero weight on the
    /// concatenated coarse features. Returns how many tensors were copied.
    pub fn warm_start_level(&mut self, level: usize) -> Result<usize> {
        if level == 0 || level >= self.config.levels {
            return Err(Error::Argument(format!(
                "cannot warm-start level {level} of a {}-level model",
                self.config.levels
            )));
        }
        let strip = |n: &str| n.split_once('.').map(|(_, rest)| rest.to_string()).unwrap_or_default();
        let src_range = self.config.level_range(level - 1);
        let dst_range = self.config.level_range(level);
        let src_names: Vec<String> = self.config.level_names(level - 1).iter().map(|n| strip(n)).collect();
        let dst_names: Vec<String> = self.config.level_names(level).iter().map(|n| strip(n)).collect();
        let mut copied = 0;
        for (di, name) in dst_names.iter().enumerate() {
            let Some(si) = src_names.iter().position(|n| n == name) else {
                continue;
            };
            let src = self.params[src_range.start + si].clone();
            let dst = &mut self.params[dst_range.start + di];
            if src.shape() == dst.shape() {
                *dst = src;
                copied += 1;
            } else if name == "entry.weight" {
                let [c_out, c_src, kh, kw] = src.dims4()?;
                let [d_out, c_dst, dh, dw] = dst.dims4()?;
                if (c_out, kh, kw) != (d_out, dh, dw) || c_src > c_dst {
                    continue;
                }
                let plane = kh * kw;
                let mut data = vec![T::zero(); dst.numel()];
                for o in 0..c_out {
                    let from = &src.data()[o * c_src * plane..(o + 1) * c_src * plane];
                    data[o * c_dst * plane..o * c_dst * plane + c_src * plane].copy_from_slice(from);
                }
                *dst = Tensor::new(dst.shape(), data)?;
                copied += 1;
            }
        }
        Ok(copied)
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> CascadeModel<U> {
        CascadeModel {
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Record every parameter on `tape`; levels for which `trainable`
    /// returns false enter as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: impl Fn(usize) -> bool) -> Vec<Var> {
        let mut vars = Vec::with_capacity(self.params.len());
        for level in 0..self.config.levels {
            let t = trainable(level);
            for p in &self.params[self.config.level_range(level)] {
                vars.push(tape.param(p, t));
            }
        }
        vars
    }

    /// Forward levels `0..=up_to` of the network described by `config` with
    /// parameters `params` (flat, as from [`bind`](Self::bind)) on per-level
    /// inputs `inputs[ℓ]` of shape N×3×h_ℓ×w_ℓ, one per model level.
    /// Cumulative masks are sized like the finest input.
    pub fn graph(
        config: &ModelConfig,
        tape: &mut Tape<T>,
        params: &[Var],
        inputs: &[Var],
        up_to: usize,
    ) -> Result<TapeOutput> {
        if up_to >= config.levels {
            return Err(Error::Dimension(format!(
                "level {up_to} requested from a {}-level model",
                config.levels
            )));
        }
        if inputs.len() != config.levels {
            return Err(Error::Dimension(format!(
                "{} pyramid levels supplied to a {}-level model",
                inputs.len(),
                config.levels
            )));
        }
        let [_, _, full_h, full_w] = tape.value(*inputs.last().expect("checked")).dims4()?;
        let mut masks = Vec::new();
        let mut features: Vec<Var> = Vec::new();
        let mut cumulative: Vec<Var> = Vec::new();
        for level in 0..=up_to {
            let p = &params[config.level_range(level)];
            let x = inputs[level];
            let [_, _, h, w] = tape.value(x).dims4()?;
            let x = match features.last() {
                None => x,
                Some(&prev) => {
                    let up = tape.resize_bilinear(prev, h, w)?;
                    tape.concat_channels(x, up)?
                }
            };
            let mut v = tape.conv2d(x, p[0], p[1], 1, 1)?;
            let mut k = 2;
            for _ in 0..config.resblocks_at(level) {
                let a = tape.conv2d(v, p[k], p[k + 1], 1, 1)?;
                let a = tape.relu(a);
                let b = tape.conv2d(a, p[k + 2], p[k + 3], 1, 1)?;
                let s = tape.add(v, b)?;
                v = tape.relu(s);
                k += 4;
            }
            let hdn = tape.conv2d(v, p[k], p[k + 1], 1, 1)?;
            let logit = tape.conv2d(hdn, p[k + 2], p[k + 3], 1, 0)?;
            let m = tape.sigmoid(logit);
            let up = tape.resize_bilinear(m, full_h, full_w)?;
            let cum = match cumulative.last() {
                None => up,
                Some(&prev) => tape.mul(prev, up)?,
            };
            masks.push(m);
            features.push(v);
            cumulative.push(cum);
        }
        Ok(TapeOutput {
            masks,
            features,
            cumulative,
        })
    }

    /// Inference on a batch of equally sized pyramids.
    pub fn forward(&self, pyramids: &[ScalePyramid], up_to: usize) -> Result<CascadeOutput<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, |_| false);
        let inputs = self.input_vars(&mut tape, pyramids)?;
        let out = Self::graph(&self.config, &mut tape, &params, &inputs, up_to)?;
        let take = |vars: &[Var]| vars.iter().map(|v| tape.value(*v).clone()).collect();
        Ok(CascadeOutput {
            per_level_masks: take(&out.masks),
            per_level_features: take(&out.features),
            cumulative_masks: take(&out.cumulative),
        })
    }

    /// Stack every pyramid level into tape constants.
    pub fn input_vars(&self, tape: &mut Tape<T>, pyramids: &[ScalePyramid]) -> Result<Vec<Var>> {
        Ok(pyramid_inputs::<T>(pyramids, self.config.levels)?
            .into_iter()
            .map(|t| tape.constant(t))
            .collect())
    }

    pub fn pyramid(&self, image: &Image) -> Result<ScalePyramid> {
        build_pyramid(image, self.config.levels, self.config.sigma_step)
    }

    /// Final cumulative mask of one image.
    pub fn predict_soft(&self, image: &Image) -> Result<SoftMask> {
        let pyr = self.pyramid(image)?;
        let out = self.forward(&[pyr], self.config.levels - 1)?;
        let last = out.cumulative_masks.last().expect("at least one level");
        SoftMask::new(
            image.height(),
            image.width(),
            last.data().iter().map(|v| v.to_f32().unwrap_or(0.0)).collect(),
        )
    }

    pub fn predict_mask(&self, image: &Image, threshold: f64) -> Result<BinaryMask> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Argument(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        Ok(self.predict_soft(image)?.binarize(threshold as f32))
    }
}

/// Per-level N×3×h×w input tensors (values shifted to [−0.5, 0.5]) for the
/// first `levels` levels of equally sized pyramids.
pub fn pyramid_inputs<T: Element>(pyramids: &[ScalePyramid], levels: usize) -> Result<Vec<Tensor<T>>> {
    let first = pyramids
        .first()
        .ok_or_else(|| Error::Dimension("empty batch".into()))?;
    if pyramids.iter().any(|p| p.levels.len() < levels) {
        return Err(Error::Dimension(format!(
            "pyramid has fewer than the {levels} levels the model needs"
        )));
    }
    (0..levels)
        .map(|l| {
            let (h, w) = (first.levels[l].height(), first.levels[l].width());
            if pyramids
                .iter()
                .any(|p| (p.levels[l].height(), p.levels[l].width()) != (h, w))
            {
                return Err(Error::Dimension(format!(
                    "batch pyramids differ in size at level {l}"
                )));
            }
            let items: Vec<Tensor<T>> = pyramids
                .iter()
                .map(|p| p.levels[l].to_input_tensor().cast())
                .collect();
            Tensor::stack(&items)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn tiny(levels: usize, channels: usize) -> ModelConfig {
        ModelConfig {
            levels,
            channels,
            resblocks: 1,
            resolution: 20,
            sigma_step: 1.5,
            level_resblocks: None,
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rng_from_seed(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn parameter_count_audit() {
        let cfg = ModelConfig {
            levels: 1,
            channels: 2,
            resblocks: 4,
            ..ModelConfig::default()
        };
        assert_eq!(CascadeModel::<f32>::new(cfg, 0).unwrap().count_parameters(), 381);
        let default = CascadeModel::<f32>::new(ModelConfig::default(), 0).unwrap();
        assert!(default.count_parameters() < 1_000_000);
    }

    #[test]
    fn warm_start_copies_the_coarser_level() {
        let config = ModelConfig {
            levels: 3,
            channels: 4,
            resblocks: 1,
            resolution: 32,
            ..ModelConfig::default()
        };
        let mut m = CascadeModel::<f64>::new(config.clone(), 3).unwrap();
        assert_eq!(m.warm_start_level(1).unwrap(), config.level_shapes(1).len());
        let (r0, r1) = (config.level_range(0), config.level_range(1));
        for k in 1..r0.len() {
            assert_eq!(m.params()[r0.start + k], m.params()[r1.start + k]);
        }
        let src = &m.params()[r0.start];
        let dst = &m.params()[r1.start];
        for o in 0..4 {
            for i in 0..7 {
                for t in 0..9 {
                    let got = dst.data()[(o * 7 + i) * 9 + t];
                    let want = if i < 3 { src.data()[(o * 3 + i) * 9 + t] } else { 0.0 };
                    assert_eq!(got, want);
                }
            }
        }
        assert_eq!(m.warm_start_level(2).unwrap(), config.level_shapes(2).len());
        assert_eq!(m.params()[config.level_range(2)], m.params()[r1]);
        assert!(m.warm_start_level(0).is_err());
    }

    #[test]
    fn single_level_cumulative_is_the_level_mask() {
        let m = CascadeModel::<f64>::new(tiny(1, 4), 1).unwrap();
        let pyr = m.pyramid(&random_image(20, 20, 2)).unwrap();
        let out = m.forward(&[pyr], 0).unwrap();
        assert_eq!(out.cumulative_masks[0], out.per_level_masks[0]);
    }

    #[test]
    fn saturated_heads_give_all_ones() {
        let mut m = CascadeModel::<f64>::new(tiny(3, 4), 3).unwrap();
        for level in 0..3 {
            let ps = m.level_params_mut(level);
            let n = ps.len();
            ps[n - 2].data_mut().fill(0.0);
            ps[n - 1].data_mut()[0] = 60.0;
        }
        let pyr = m.pyramid(&random_image(20, 20, 4)).unwrap();
        let out = m.forward(&[pyr], 2).unwrap();
        for c in &out.cumulative_masks {
            assert!(c.data().iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn shapes_and_ranges() {
        let m = CascadeModel::<f32>::new(tiny(3, 4), 5).unwrap();
        let pyr = m.pyramid(&random_image(20, 20, 6)).unwrap();
        let out = m.forward(&[pyr.clone(), pyr], 2).unwrap();
        for (l, (mask, feat)) in out.per_level_masks.iter().zip(&out.per_level_features).enumerate() {
            let [n, c, h, w] = mask.dims4().unwrap();
            assert_eq!((n, c), (2, 1));
            assert_eq!(feat.shape(), &[2, 4, h, w]);
            assert!(mask.data().iter().all(|v| (0.0..=1.0).contains(v)), "level {l}");
        }
        assert_eq!(out.cumulative_masks[2].shape(), &[2, 1, 20, 20]);
    }

    #[test]
    fn level_mismatch_is_a_dimension_error() {
        let m = CascadeModel::<f32>::new(tiny(3, 4), 5).unwrap();
        let pyr = build_pyramid(&random_image(20, 20, 1), 2, 1.5).unwrap();
        assert!(matches!(m.forward(&[pyr], 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn threshold_extremes_and_bounds() {
        let m = CascadeModel::<f32>::new(tiny(2, 4), 7).unwrap();
        let img = random_image(20, 20, 8);
        let soft = m.predict_soft(&img).unwrap();
        let lo = soft.data().iter().copied().fold(f32::INFINITY, f32::min);
        let hi = soft.data().iter().copied().fold(0.0f32, f32::max);
        assert!(lo > 0.0 && hi < 1.0);
        assert_eq!(m.predict_mask(&img, lo as f64 * 0.999).unwrap().count(), 400);
        assert_eq!(m.predict_mask(&img, hi as f64 * 1.001).unwrap().count(), 0);
        assert!(m.predict_mask(&img, 1.0).is_err());
        assert!(matches!(
            m.predict_mask(&random_image(8, 8, 1), 0.5),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(3, 4);
        cfg.level_resblocks = Some(vec![1, 2]);
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "level_resblocks"));
        let cfg = ModelConfig {
            resolution: 10,
            ..tiny(3, 4)
        };
        assert!(cfg.validate().is_err());
    }
}
