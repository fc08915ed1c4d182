//! Stage-wise cascade training.
//!
//! Stage ℓ optimises only level-ℓ parameters against the full-resolution
//! cumulative mask M̃_ℓ; coarser levels enter the tape as constants, so
//! their product gates the gradient reaching level ℓ. After the step budget
//! a threshold τ_ℓ is calibrated on fresh validation samples against the
//! minimum precision/recall targets.

mod run;

use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeModel, TapeOutput};
use crate::error::{Error, Result};
use crate::imgproc::{BinaryMask, Image, ScalePyramid, SoftMask};
use crate::metrics::pr_curve;
use crate::tensor::{Element, Tape, Tensor, Var};

pub use run::{
    run_training, train_cascade, train_joint, train_stage, Batcher, StageSink, TrainConfig,
    TrainMode, TrainOutcome, CALIBRATION_FILE, CONFIG_FILE, LOSS_CURVE_FILE,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub level: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_p_min")]
    pub p_min: f64,
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    #[serde(default = "default_grid")]
    pub threshold_grid: f64,
    #[serde(default = "default_validation")]
    pub validation_samples: usize,
    /// Start the level from a copy of the coarser level's weights.
    #[serde(default = "default_warm_start")]
    pub warm_start: bool,
}

fn default_steps() -> usize {
    500
}
fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    1e-3
}
fn default_p_min() -> f64 {
    0.6
}
fn default_r_min() -> f64 {
    0.95
}
fn default_grid() -> f64 {
    0.01
}
fn default_validation() -> usize {
    32
}
fn default_warm_start() -> bool {
    true
}

impl StageConfig {
    pub fn new(level: usize) -> Self {
        Self {
            level,
            steps: default_steps(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            p_min: default_p_min(),
            r_min: default_r_min(),
            threshold_grid: default_grid(),
            validation_samples: default_validation(),
            warm_start: default_warm_start(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        for (name, v) in [("p_min", self.p_min), ("r_min", self.r_min)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(name, format!("{v} outside (0, 1]")));
            }
        }
        if !(self.threshold_grid > 0.0 && self.threshold_grid <= 0.5) {
            return Err(Error::config("threshold_grid", "step must be in (0, 0.5]"));
        }
        if self.validation_samples == 0 {
            return Err(Error::config("validation_samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of calibrating τ on validation data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// Some τ met the recall target.
    pub recall_feasible: bool,
    /// The chosen τ also met the precision target.
    pub precision_feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub level: usize,
    pub calibration: Calibration,
    /// Mean batch loss after every step.
    pub loss_curve: Vec<f64>,
    /// Samples whose positive fraction had to be clamped.
    pub alpha_clamps: usize,
}

/// Area-average a {0,1} mask down to `target_h × target_w`, then binarise
/// with ties at exactly 0.5 going to 1.
pub fn downsample_gt(mask: &BinaryMask, target_h: usize, target_w: usize) -> Result<BinaryMask> {
    let (sh, sw) = (mask.height(), mask.width());
    if target_h == 0 || target_w == 0 || target_h > sh || target_w > sw {
        return Err(Error::Size(format!(
            "cannot downsample {sh}×{sw} to {target_h}×{target_w}"
        )));
    }
    // Coordinates scaled by the target size so every overlap is an integer.
    let overlap = |lo: usize, hi: usize, r: usize, unit: usize| {
        let (a, b) = (r * unit, (r + 1) * unit);
        b.min(hi).saturating_sub(a.max(lo))
    };
    let mut out = BinaryMask::zeros(target_h, target_w);
    for ty in 0..target_h {
        let (ylo, yhi) = (ty * sh, (ty + 1) * sh);
        let rows = ylo / target_h..yhi.div_ceil(target_h);
        for tx in 0..target_w {
            let (xlo, xhi) = (tx * sw, (tx + 1) * sw);
            let cols = xlo / target_w..xhi.div_ceil(target_w);
            let mut on = 0usize;
            for y in rows.clone() {
                let wy = overlap(ylo, yhi, y, target_h);
                for x in cols.clone() {
                    if mask.get(y, x) {
                        on += wy * overlap(xlo, xhi, x, target_w);
                    }
                }
            }
            out.set(ty, tx, 2 * on >= sh * sw);
        }
    }
    Ok(out)
}

/// Class weights `(1/α, 1/(1−α))` with α the positive fraction clamped to
/// `[1/HW, 1 − 1/HW]`; the flag reports whether clamping happened.
pub fn balance_weights(gt: &BinaryMask) -> (f64, f64, bool) {
    let n = (gt.height() * gt.width()) as f64;
    let raw = gt.count() as f64 / n;
    let alpha = raw.clamp(1.0 / n, 1.0 - 1.0 / n);
    (1.0 / alpha, 1.0 / (1.0 - alpha), alpha != raw)
}

/// A training batch converted to network inputs.
pub struct PreparedBatch<T> {
    pub inputs: Vec<Tensor<T>>,
    pub targets: Tensor<T>,
    pub pos_weight: Vec<T>,
    pub neg_weight: Vec<T>,
    pub clamped: usize,
}

impl<T: Element> PreparedBatch<T> {
    pub fn new(pyramids: &[ScalePyramid], gts: &[BinaryMask], levels: usize) -> Result<Self> {
        if pyramids.len() != gts.len() || gts.is_empty() {
            return Err(Error::Dimension(format!(
                "{} images for {} masks",
                pyramids.len(),
                gts.len()
            )));
        }
        let inputs = crate::cascade::pyramid_inputs::<T>(pyramids, levels)?;
        let targets = Tensor::stack(&gts.iter().map(|g| g.to_tensor().cast()).collect::<Vec<_>>())?;
        let (mut pos_weight, mut neg_weight, mut clamped) = (Vec::new(), Vec::new(), 0);
        for g in gts {
            let (p, n, c) = balance_weights(g);
            if c {
                log::debug!("positive fraction of a {}×{} mask clamped", g.height(), g.width());
                clamped += 1;
            }
            pos_weight.push(T::lit(p));
            neg_weight.push(T::lit(n));
        }
        Ok(Self {
            inputs,
            targets,
            pos_weight,
            neg_weight,
            clamped,
        })
    }
}

/// Tape of one loss evaluation.
pub struct LossGraph<T> {
    pub tape: Tape<T>,
    /// One handle per model parameter, in model order.
    pub params: Vec<Var>,
    pub output: TapeOutput,
    pub loss: Var,
}

impl<T: Element> LossGraph<T> {
    pub fn loss_value(&self) -> T {
        self.tape.value(self.loss).data()[0]
    }
}

/// Balanced BCE of M̃_ℓ against the full-resolution masks, with only the
/// parameters of `level` trainable.
pub fn stage_graph<T: Element>(
    model: &CascadeModel<T>,
    batch: &PreparedBatch<T>,
    level: usize,
) -> Result<LossGraph<T>> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, |l| l == level);
    let inputs: Vec<Var> = batch.inputs
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let output = CascadeModel::graph(model.config(), &mut tape, &params, &inputs, level)?;
    let target = tape.constant(batch.targets.clone());
    let loss = tape.weighted_bce(
        output.cumulative[level],
        target,
        &batch.pos_weight,
        &batch.neg_weight,
    )?;
    Ok(LossGraph {
        tape,
        params,
        output,
        loss,
    })
}

/// Joint baseline: every level trainable, loss summed over all M̃_ℓ.
pub fn joint_graph<T: Element>(model: &CascadeModel<T>, batch: &PreparedBatch<T>) -> Result<LossGraph<T>> {
    let last = model.num_levels() - 1;
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, |_| true);
    let inputs: Vec<Var> = batch.inputs
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let output = CascadeModel::graph(model.config(), &mut tape, &params, &inputs, last)?;
    let target = tape.constant(batch.targets.clone());
    let mut loss: Option<Var> = None;
    for &cum in &output.cumulative {
        let l = tape.weighted_bce(cum, target, &batch.pos_weight, &batch.neg_weight)?;
        loss = Some(match loss {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    Ok(LossGraph {
        tape,
        params,
        output,
        loss: loss.expect("at least one level"),
    })
}

/// Stage-ℓ loss of a batch of images.
pub fn stage_loss<T: Element>(
    model: &CascadeModel<T>,
    images: &[Image],
    gts: &[BinaryMask],
    level: usize,
) -> Result<T> {
    let pyramids = images
        .iter()
        .map(|im| model.pyramid(im))
        .collect::<Result<Vec<_>>>()?;
    let batch = PreparedBatch::new(&pyramids, gts, model.num_levels())?;
    Ok(stage_graph(model, &batch, level)?.loss_value())
}

/// Largest τ < 1 on the grid meeting both targets; failing that, the largest
/// meeting the recall target alone.
pub fn calibrate(
    preds: &[SoftMask],
    gts: &[BinaryMask],
    p_min: f64,
    r_min: f64,
    grid_step: f64,
) -> Result<Calibration> {
    let curve = pr_curve(preds, gts, grid_step)?;
    let usable = &curve[..curve.len() - 1];
    let pick = |need_p: bool| {
        usable
            .iter()
            .rev()
            .find(|pt| pt.recall >= r_min && (!need_p || pt.precision >= p_min))
    };
    let (pt, recall_ok, precision_ok) = match (pick(true), pick(false)) {
        (Some(pt), _) => (pt, true, true),
        (None, Some(pt)) => (pt, true, false),
        (None, None) => {
            let best = usable
                .iter()
                .rev()
                .max_by(|a, b| a.recall.total_cmp(&b.recall))
                .expect("grid has points below 1");
            (best, false, best.precision >= p_min)
        }
    };
    Ok(Calibration {
        threshold: pt.threshold,
        precision: pt.precision,
        recall: pt.recall,
        recall_feasible: recall_ok,
        precision_feasible: precision_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::ModelConfig;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    #[test]
    fn downsample_examples() {
        let ones = BinaryMask::from_fn(6, 9, |_, _| true);
        for (h, w) in [(1, 1), (4, 5), (6, 9)] {
            assert_eq!(downsample_gt(&ones, h, w).unwrap().count(), h * w);
        }
        let half = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        assert!(downsample_gt(&half, 1, 1).unwrap().get(0, 0));
        let quarter = BinaryMask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        assert!(!downsample_gt(&quarter, 1, 1).unwrap().get(0, 0));
        let m = BinaryMask::from_fn(7, 5, |y, x| (y * 3 + x) % 4 == 0);
        assert_eq!(downsample_gt(&m, 7, 5).unwrap(), m);
        assert!(downsample_gt(&m, 8, 5).is_err());
    }

    #[test]
    fn fractional_downsample_matches_supersampled_average() {
        let mut rng = rng_from_seed(4);
        for _ in 0..30 {
            let m = BinaryMask::from_fn(9, 7, |_, _| rng.random_bool(0.5));
            let (th, tw) = (rng.random_range(1..=9), rng.random_range(1..=7));
            let d = downsample_gt(&m, th, tw).unwrap();
            // Every source pixel split into th×tw sub-cells, each owned by one target pixel.
            let mut on = vec![0usize; th * tw];
            for y in 0..9 * th {
                for x in 0..7 * tw {
                    if m.get(y / th, x / tw) {
                        on[(y / 9) * tw + x / 7] += 1;
                    }
                }
            }
            for i in 0..th * tw {
                assert_eq!(d.data()[i] == 1, 2 * on[i] >= 63, "{th}×{tw} pixel {i}");
            }
        }
    }

    #[test]
    fn balance_weight_examples() {
        let q = BinaryMask::from_fn(4, 4, |y, x| y < 2 && x < 2);
        let (p, n, c) = balance_weights(&q);
        assert_eq!((p, n, c), (4.0, 4.0 / 3.0, false));
        let (p, n, c) = balance_weights(&BinaryMask::zeros(4, 4));
        assert!(c);
        assert_eq!(p, 16.0);
        assert!((n - 16.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn stage_loss_matches_scalar_loop_and_freezes_coarse_levels() {
        let cfg = ModelConfig {
            levels: 2,
            channels: 4,
            resblocks: 1,
            sigma_step: 2.0,
            resolution: 16,
            ..ModelConfig::default()
        };
        let model = CascadeModel::<f64>::new(cfg, 5).unwrap();
        let mut rng = rng_from_seed(1);
        let images: Vec<Image> = (0..2)
            .map(|_| Image::from_fn(16, 16, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap())
            .collect();
        let gts: Vec<BinaryMask> = (0..2)
            .map(|_| BinaryMask::from_fn(16, 16, |_, _| rng.random_bool(0.3)))
            .collect();
        let pyrs: Vec<_> = images.iter().map(|i| model.pyramid(i).unwrap()).collect();
        let batch = PreparedBatch::<f64>::new(&pyrs, &gts, 2).unwrap();
        let g = stage_graph(&model, &batch, 1).unwrap();
        let cum = g.tape.value(g.output.cumulative[1]).data();
        let mut total = 0.0;
        for (n, gt) in gts.iter().enumerate() {
            let a = gt.count() as f64 / 256.0;
            let mut s = 0.0;
            for i in 0..256 {
                let p = cum[n * 256 + i].clamp(1e-7, 1.0 - 1e-7);
                s += if gt.data()[i] == 1 {
                    p.ln() / a
                } else {
                    (1.0 - p).ln() / (1.0 - a)
                };
            }
            total += -s / 256.0;
        }
        assert!((g.loss_value() - total / 2.0).abs() < 1e-10);

        let grads = g.tape.backward(g.loss).unwrap();
        let r0 = model.config().level_range(0);
        let r1 = model.config().level_range(1);
        assert!(g.params[r0].iter().all(|v| grads.get(*v).is_none()));
        assert!(g.params[r1].iter().all(|v| grads.get(*v).is_some()));
    }

    fn soft_of(m: &BinaryMask) -> SoftMask {
        SoftMask::from(m)
    }

    #[test]
    fn calibration_examples() {
        let mut rng = rng_from_seed(2);
        let gts: Vec<BinaryMask> = (0..4)
            .map(|_| BinaryMask::from_fn(8, 8, |_, _| rng.random_bool(0.4)))
            .collect();
        let perfect: Vec<SoftMask> = gts.iter().map(soft_of).collect();
        let c = calibrate(&perfect, &gts, 0.6, 0.95, 0.01).unwrap();
        assert!((c.threshold - 0.99).abs() < 1e-12);
        assert!(c.precision_feasible && c.recall_feasible);

        let noisy: Vec<SoftMask> = (0..4)
            .map(|_| SoftMask::new(8, 8, (0..64).map(|_| rng.random::<f32>()).collect()).unwrap())
            .collect();
        let c = calibrate(&noisy, &gts, 1e-9, 1e-9, 0.01).unwrap();
        let curve = pr_curve(&noisy, &gts, 0.01).unwrap();
        let expect = curve[..100].iter().rev().find(|p| p.recall >= 1e-9).unwrap();
        assert_eq!(c.threshold, expect.threshold);

        let c = calibrate(&noisy, &gts, 1.0, 0.95, 0.01).unwrap();
        assert!(c.recall >= 0.95 && c.recall_feasible && !c.precision_feasible);
    }

    #[test]
    fn stage_config_validation() {
        assert!(StageConfig::new(0).validate().is_ok());
        let bad = StageConfig {
            r_min: 0.0,
            ..StageConfig::new(0)
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "r_min"));
    }
}
