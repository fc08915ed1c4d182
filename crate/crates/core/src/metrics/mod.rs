//! Segmentation metrics: IoU, MAE, precision/recall sweeps and max-F_β.
//!
//! Soft masks are binarised as `score >= τ` with both sides compared in
//! `f32`. Per-image precision is 1 when nothing is predicted positive and
//! recall is 1 when the ground truth is empty; curves average per-image
//! values (macro average).

mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{BinaryMask, SoftMask};

pub use report::{
    evaluate_dataset, evaluate_predictions, write_report, CellReport, EvalOptions, EvalReport,
};

pub const DEFAULT_GRID_STEP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{what}: {}×{} vs {}×{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// |pred ∧ gt| / |pred ∨ gt|, or 1 when both are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(
        (pred.height(), pred.width()),
        (gt.height(), gt.width()),
        "iou",
    )?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        inter += (p & g) as usize;
        union += (p | g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

pub fn mae(pred: &SoftMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(
        (pred.height(), pred.width()),
        (gt.height(), gt.width()),
        "mae",
    )?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| (f64::from(*p) - f64::from(*g)).abs())
        .sum();
    Ok(total / pred.data().len() as f64)
}

/// Per-image precision and recall with the empty-set conventions.
pub fn precision_recall(pred: &BinaryMask, gt: &BinaryMask) -> Result<(f64, f64)> {
    check_dims(
        (pred.height(), pred.width()),
        (gt.height(), gt.width()),
        "precision_recall",
    )?;
    let (mut tp, mut pp, mut gp) = (0usize, 0usize, 0usize);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        tp += (p & g) as usize;
        pp += *p as usize;
        gp += *g as usize;
    }
    Ok(ratios(tp, pp, gp))
}

fn ratios(tp: usize, pp: usize, gp: usize) -> (f64, f64) {
    let p = if pp == 0 { 1.0 } else { tp as f64 / pp as f64 };
    let r = if gp == 0 { 1.0 } else { tp as f64 / gp as f64 };
    (p, r)
}

/// `{0, step, 2·step, …, 1}`.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Argument(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| (i as f64 * step).min(1.0)).collect())
}

/// F_β = (1+β²)·P·R / (β²·P + R); 0 when P = R = 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Counts of one image at every grid threshold.
pub(crate) struct SweepCounts {
    /// True positives per threshold.
    tp: Vec<usize>,
    /// Predicted positives per threshold.
    pp: Vec<usize>,
    /// Ground-truth positives.
    gp: usize,
}

impl SweepCounts {
    fn new(pred: &SoftMask, gt: &BinaryMask, grid: &[f32]) -> Result<Self> {
        check_dims(
            (pred.height(), pred.width()),
            (gt.height(), gt.width()),
            "threshold sweep",
        )?;
        // Bucket k holds scores passing exactly the first k thresholds.
        let mut pos = vec![0usize; grid.len() + 1];
        let mut all = vec![0usize; grid.len() + 1];
        let mut gp = 0;
        for (v, g) in pred.data().iter().zip(gt.data()) {
            let k = grid.partition_point(|t| *v >= *t);
            all[k] += 1;
            if *g == 1 {
                pos[k] += 1;
                gp += 1;
            }
        }
        let mut tp = vec![0usize; grid.len()];
        let mut pp = vec![0usize; grid.len()];
        let (mut acc_tp, mut acc_pp) = (0, 0);
        for j in (0..grid.len()).rev() {
            acc_tp += pos[j + 1];
            acc_pp += all[j + 1];
            tp[j] = acc_tp;
            pp[j] = acc_pp;
        }
        Ok(Self { tp, pp, gp })
    }

    fn precision_recall(&self, j: usize) -> (f64, f64) {
        ratios(self.tp[j], self.pp[j], self.gp)
    }

    fn iou(&self, j: usize) -> f64 {
        let union = self.pp[j] + self.gp - self.tp[j];
        if union == 0 {
            1.0
        } else {
            self.tp[j] as f64 / union as f64
        }
    }
}

fn sweeps(preds: &[SoftMask], gts: &[BinaryMask], step: f64) -> Result<(Vec<f64>, Vec<SweepCounts>)> {
    if preds.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument("empty prediction list".into()));
    }
    let grid = threshold_grid(step)?;
    let grid32: Vec<f32> = grid.iter().map(|t| *t as f32).collect();
    let counts = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| SweepCounts::new(p, g, &grid32))
        .collect::<Result<_>>()?;
    Ok((grid, counts))
}

/// Mean precision and recall at every grid threshold.
pub fn pr_curve(preds: &[SoftMask], gts: &[BinaryMask], step: f64) -> Result<Vec<PrPoint>> {
    let (grid, counts) = sweeps(preds, gts, step)?;
    let n = counts.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let (mut p, mut r) = (0.0, 0.0);
            for c in &counts {
                let (pi, ri) = c.precision_recall(j);
                p += pi;
                r += ri;
            }
            PrPoint {
                threshold: *t,
                precision: p / n,
                recall: r / n,
            }
        })
        .collect())
}

/// Largest F_β over a curve and the smallest threshold attaining it.
pub fn max_f_beta_of_curve(curve: &[PrPoint], beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0) {
        return Err(Error::Argument(format!("beta must be positive, got {beta}")));
    }
    let mut best: Option<(f64, f64)> = None;
    for pt in curve {
        let f = f_beta(pt.precision, pt.recall, beta);
        if best.is_none_or(|(bf, _)| f > bf) {
            best = Some((f, pt.threshold));
        }
    }
    best.ok_or_else(|| Error::Argument("empty PR curve".into()))
}

/// max-F_β from dataset-mean precision and recall.
pub fn max_f_beta(
    preds: &[SoftMask],
    gts: &[BinaryMask],
    beta: f64,
    step: f64,
) -> Result<(f64, f64)> {
    max_f_beta_of_curve(&pr_curve(preds, gts, step)?, beta)
}

/// Alternative mode: F_β averaged over images at each threshold, then maximised.
pub fn max_f_beta_per_image(
    preds: &[SoftMask],
    gts: &[BinaryMask],
    beta: f64,
    step: f64,
) -> Result<(f64, f64)> {
    if !(beta > 0.0) {
        return Err(Error::Argument(format!("beta must be positive, got {beta}")));
    }
    let (grid, counts) = sweeps(preds, gts, step)?;
    let n = counts.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (j, t) in grid.iter().enumerate() {
        let f = counts
            .iter()
            .map(|c| {
                let (p, r) = c.precision_recall(j);
                f_beta(p, r, beta)
            })
            .sum::<f64>()
            / n;
        if f > best.0 {
            best = (f, *t);
        }
    }
    Ok(best)
}

/// Mean IoU at every grid threshold.
pub fn miou_curve(preds: &[SoftMask], gts: &[BinaryMask], step: f64) -> Result<Vec<(f64, f64)>> {
    let (grid, counts) = sweeps(preds, gts, step)?;
    let n = counts.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, t)| (*t, counts.iter().map(|c| c.iou(j)).sum::<f64>() / n))
        .collect())
}

/// Threshold maximising mean IoU (smallest on ties).
pub fn select_miou_threshold(preds: &[SoftMask], gts: &[BinaryMask], step: f64) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (t, m) in miou_curve(preds, gts, step)? {
        if m > best.0 {
            best = (m, t);
        }
    }
    Ok(best.1)
}

/// Mean IoU after binarising every prediction at `threshold`.
pub fn mean_iou(preds: &[SoftMask], gts: &[BinaryMask], threshold: f64) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Dimension("mean_iou needs equal, nonempty lists".into()));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        total += iou(&p.binarize(threshold as f32), g)?;
    }
    Ok(total / preds.len() as f64)
}

pub fn mean_mae(preds: &[SoftMask], gts: &[BinaryMask]) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Dimension("mean_mae needs equal, nonempty lists".into()));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        total += mae(p, g)?;
    }
    Ok(total / preds.len() as f64)
}
