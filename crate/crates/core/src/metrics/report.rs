//! Per-cell evaluation of a model on a materialised test set.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{max_f_beta_of_curve, mean_iou, mean_mae, pr_curve, PrPoint, DEFAULT_GRID_STEP};
use crate::cascade::CascadeModel;
use crate::error::{Error, Result};
use crate::imgproc::{BinaryMask, SoftMask};
use crate::synth::{load_test_set, Category, SizeLevel};

pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "pr_curves.csv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default = "default_step")]
    pub grid_step: f64,
    /// Binarisation threshold for mIoU, normally selected on validation data.
    #[serde(default = "default_threshold")]
    pub miou_threshold: f64,
}

fn default_step() -> f64 {
    DEFAULT_GRID_STEP
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            miou_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    /// `None` on the overall row.
    pub category: Option<Category>,
    pub size_level: Option<SizeLevel>,
    pub images: usize,
    pub miou: f64,
    pub mae: f64,
    pub max_f03: f64,
    pub max_f03_threshold: f64,
    pub max_f2: f64,
    pub max_f2_threshold: f64,
    pub pr_curve: Vec<PrPoint>,
}

impl CellReport {
    fn compute(
        category: Option<Category>,
        size_level: Option<SizeLevel>,
        preds: &[SoftMask],
        gts: &[BinaryMask],
        options: &EvalOptions,
    ) -> Result<Self> {
        let curve = pr_curve(preds, gts, options.grid_step)?;
        let (max_f03, max_f03_threshold) = max_f_beta_of_curve(&curve, 0.3)?;
        let (max_f2, max_f2_threshold) = max_f_beta_of_curve(&curve, 2.0)?;
        Ok(Self {
            category,
            size_level,
            images: preds.len(),
            miou: mean_iou(preds, gts, options.miou_threshold)?,
            mae: mean_mae(preds, gts)?,
            max_f03,
            max_f03_threshold,
            max_f2,
            max_f2_threshold,
            pr_curve: curve,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub cells: Vec<CellReport>,
    pub overall: CellReport,
}

impl EvalReport {
    pub fn cell(&self, category: Category, size_level: SizeLevel) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.category == Some(category) && c.size_level == Some(size_level))
    }
}

/// One group of predictions per (category, size) cell, in input order.
pub type CellPredictions = (Category, SizeLevel, Vec<SoftMask>, Vec<BinaryMask>);

pub fn evaluate_predictions(cells: &[CellPredictions], options: &EvalOptions) -> Result<EvalReport> {
    if cells.is_empty() {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    let mut reports = Vec::with_capacity(cells.len());
    let (mut all_preds, mut all_gts) = (Vec::new(), Vec::new());
    for (category, size, preds, gts) in cells {
        reports.push(CellReport::compute(
            Some(*category),
            Some(*size),
            preds,
            gts,
            options,
        )?);
        all_preds.extend_from_slice(preds);
        all_gts.extend_from_slice(gts);
    }
    let overall = CellReport::compute(None, None, &all_preds, &all_gts, options)?;
    Ok(EvalReport {
        options: *options,
        cells: reports,
        overall,
    })
}

/// Run the model's final cumulative mask on every test image, in parallel
/// on the current rayon pool. Aggregation order is fixed.
pub fn evaluate_dataset(
    model: &CascadeModel<f32>,
    test_dir: &Path,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let manifest = load_test_set(test_dir)?;
    let mut cells = Vec::with_capacity(manifest.cells.len());
    for cell in &manifest.cells {
        if cell.samples.is_empty() {
            continue;
        }
        let pairs = cell
            .samples
            .par_iter()
            .map(|sample| {
                let (image, mask) = manifest.load_sample(test_dir, sample)?;
                Ok((model.predict_soft(&image)?, mask))
            })
            .collect::<Result<Vec<_>>>()?;
        let (preds, gts) = pairs.into_iter().unzip();
        cells.push((cell.category, cell.size_level, preds, gts));
    }
    evaluate_predictions(&cells, options)
}

fn curve_rows(out: &mut String, cat: &str, size: &str, curve: &[PrPoint]) {
    for pt in curve {
        let _ = writeln!(
            out,
            "{cat},{size},{:.4},{:.6},{:.6},{:.6},{:.6}",
            pt.threshold,
            pt.precision,
            pt.recall,
            super::f_beta(pt.precision, pt.recall, 0.3),
            super::f_beta(pt.precision, pt.recall, 2.0),
        );
    }
}

/// Write `report.json` and `pr_curves.csv` into `out_dir`.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let mut csv = String::from("category,size,threshold,precision,recall,f0.3,f2\n");
    for c in &report.cells {
        let cat = c.category.map(|v| v.to_string()).unwrap_or_default();
        let size = c.size_level.map(|v| v.to_string()).unwrap_or_default();
        curve_rows(&mut csv, &cat, &size, &c.pr_curve);
    }
    curve_rows(&mut csv, "all", "all", &report.overall.pr_curve);
    let path = out_dir.join(CURVES_FILE);
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}
