use std::fs;
use std::path::{Path, PathBuf};

use graphseg::cascade::load_model;
use graphseg::imgproc::io::{load_image, save_mask, save_soft_mask};
use graphseg::metrics::{evaluate_dataset, write_report, EvalOptions};
use graphseg::selfcheck::gradient_suite;
use graphseg::synth::{build_test_set, BaseImages, PatternSource, Procedural, SpriteLibrary, TestGrid};
use graphseg::train::{run_training, StageResult, StageSink, TrainConfig};
use graphseg::{CascadeModel, Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const RUN_FILE: &str = "run.json";

pub struct Context {
    pub seed: Option<u64>,
    pub jobs: usize,
    pub deterministic: bool,
}

/// `synth` config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub grid: TestGrid,
    /// Directory of PNG base photos; procedural backgrounds when absent.
    #[serde(default)]
    pub base_dir: Option<PathBuf>,
    /// Whether procedural backgrounds carry blob distractors.
    #[serde(default = "default_clutter")]
    pub clutter: bool,
    /// Directory of RGBA PNG sprites for stickers and logos.
    #[serde(default)]
    pub sprite_dir: Option<PathBuf>,
}

fn default_clutter() -> bool {
    true
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        if e.is_data() || e.is_syntax() || e.is_eof() {
            Error::config(path.display().to_string(), e.to_string())
        } else {
            Error::json(path, e)
        }
    })
}

/// Resolved config plus everything else needed to rerun a command.
fn write_run_manifest<C: Serialize>(out: &Path, command: &str, ctx: &Context, config: &C) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = serde_json::json!({
        "tool": "graphseg",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "deterministic": ctx.deterministic,
        "config": config,
    });
    let path = out.join(RUN_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn synth(ctx: &Context, config: &Path, out: &Path) -> Result<()> {
    let mut file: SynthFile = read_json(config)?;
    if let Some(seed) = ctx.seed {
        file.grid.seed = seed;
    }
    file.grid.validate()?;
    let bases = match &file.base_dir {
        Some(dir) => BaseImages::load_dir(dir)?,
        None if file.clutter => BaseImages::Procedural,
        None => BaseImages::Smooth,
    };
    let source: Box<dyn PatternSource> = match &file.sprite_dir {
        Some(dir) => Box::new(SpriteLibrary::load_dir(dir)?),
        None => Box::new(Procedural),
    };
    let manifest = build_test_set(&bases, source.as_ref(), out, &file.grid)?;
    write_run_manifest(out, "synth", ctx, &file)?;
    log::info!(
        "wrote {} images in {} cells to {}",
        manifest.len(),
        manifest.cells.len(),
        out.display()
    );
    Ok(())
}

struct Progress;

impl StageSink for Progress {
    fn step(&mut self, level: usize, step: usize, loss: f64) {
        if step % 50 == 0 {
            log::info!("level {level} step {step} loss {loss:.4}");
        }
    }

    fn stage_done(&mut self, _model: &CascadeModel<f32>, r: &StageResult) -> Result<()> {
        let c = &r.calibration;
        log::info!(
            "level {} calibrated: threshold {:.2} precision {:.4} recall {:.4}",
            r.level,
            c.threshold,
            c.precision,
            c.recall
        );
        Ok(())
    }
}

pub fn train(ctx: &Context, config: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let mut cfg: TrainConfig = read_json(config)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    if ctx.deterministic {
        cfg.prefetch = false;
    } else if ctx.jobs > 1 {
        cfg.prefetch = true;
    }
    cfg.validate()?;
    for dir in [&cfg.data.base_dir, &cfg.data.sprite_dir].into_iter().flatten() {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
            ));
        }
    }
    write_run_manifest(out, "train", ctx, &cfg)?;
    let outcome = run_training(&cfg, Some(out), resume, &mut Progress)?;
    for w in &outcome.manifest.warnings {
        eprintln!("warning: {w}");
    }
    log::info!(
        "trained {} steps; model written to {}",
        outcome.manifest.step,
        out.join("model.json").display()
    );
    Ok(())
}

pub fn eval(
    ctx: &Context,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let (model, manifest) = load_model(checkpoint)?;
    let options = match config {
        Some(p) => read_json(p)?,
        None => EvalOptions {
            miou_threshold: manifest.decision_threshold(),
            ..EvalOptions::default()
        },
    };
    let report = evaluate_dataset(&model, data, &options)?;
    write_report(&report, out)?;
    write_run_manifest(out, "eval", ctx, &options)?;
    for c in report.cells.iter().chain(Some(&report.overall)) {
        let name = match (c.category, c.size_level) {
            (Some(cat), Some(size)) => format!("{cat}/{size}"),
            _ => "overall".to_string(),
        };
        println!(
            "{name:<16} n={:<4} mIoU={:.4} MAE={:.4} maxF0.3={:.4} maxF2={:.4}",
            c.images, c.miou, c.mae, c.max_f03, c.max_f2
        );
    }
    Ok(())
}

pub fn infer(checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let (model, manifest) = load_model(checkpoint)?;
    let img = load_image(image)?;
    let soft = model.predict_soft(&img)?;
    let threshold = manifest.decision_threshold();
    let mask = soft.binarize(threshold as f32);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_soft_mask(&out.join("soft.png"), &soft)?;
    save_mask(&out.join("mask.png"), &mask)?;
    println!(
        "threshold {threshold:.2}: {:.2}% of pixels positive",
        100.0 * mask.area_fraction()
    );
    Ok(())
}

pub fn gradcheck(ctx: &Context, out: Option<&Path>) -> Result<()> {
    let reports = gradient_suite(ctx.seed.unwrap_or(0))?;
    let mut failed = Vec::new();
    let mut rows = Vec::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{status:<4} {:<34} {:>6} entries  max rel err {:.3e}",
            r.name, r.checked, r.max_relative_error
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
        rows.push(serde_json::json!({
            "name": r.name,
            "checked": r.checked,
            "max_relative_error": r.max_relative_error,
            "tolerance": r.tolerance,
            "passed": r.passed(),
        }));
    }
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}
