//! Training loops, data batching and the run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{
    calibrate, joint_graph, stage_graph, Calibration, PreparedBatch, StageConfig,
    StageResult,
};
use crate::cascade::{load_model, save_model, CascadeModel, ModelConfig, ModelManifest};
use crate::error::{Error, Result};
use crate::imgproc::{BinaryMask, ScalePyramid, SoftMask};
use crate::metrics::select_miou_threshold;
use crate::rng::{derive_seed, stream_tag};
use crate::synth::{DataConfig, SampleStream};
use crate::tensor::{Adam, AdamConfig, Gradients, Tensor, Var};

pub const CONFIG_FILE: &str = "config.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const CALIBRATION_FILE: &str = "calibration.json";

/// Prefetched batches waiting for the optimiser.
const PREFETCH_DEPTH: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Stagewise,
    /// All levels at once, supervising every cumulative mask.
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub mode: TrainMode,
    /// One entry per level; defaults for every level when absent.
    #[serde(default)]
    pub stages: Option<Vec<StageConfig>>,
    #[serde(default)]
    pub seed: u64,
    /// Synthesize the next batches on a second thread.
    #[serde(default)]
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            mode: TrainMode::Stagewise,
            stages: None,
            seed: 0,
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn stage_configs(&self) -> Vec<StageConfig> {
        match &self.stages {
            Some(s) => s.clone(),
            None => (0..self.model.levels).map(StageConfig::new).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate()?;
        if self.model.resolution != self.data.resolution {
            return Err(Error::config(
                "data.resolution",
                format!(
                    "{} differs from model.resolution {}",
                    self.data.resolution, self.model.resolution
                ),
            ));
        }
        let stages = self.stage_configs();
        if stages.len() != self.model.levels {
            return Err(Error::config(
                "stages",
                format!("{} entries for {} levels", stages.len(), self.model.levels),
            ));
        }
        for (l, s) in stages.iter().enumerate() {
            if s.level != l {
                return Err(Error::config("stages", format!("entry {l} has level {}", s.level)));
            }
            s.validate()?;
        }
        Ok(())
    }
}

/// Turns sample indices into network-ready batches.
pub struct Batcher<'a> {
    stream: &'a SampleStream,
    levels: usize,
    sigma_step: f64,
}

impl<'a> Batcher<'a> {
    pub fn new(stream: &'a SampleStream, config: &ModelConfig) -> Self {
        Self {
            stream,
            levels: config.levels,
            sigma_step: config.sigma_step,
        }
    }

    pub fn fetch(&self, start: u64, count: usize) -> Result<(Vec<ScalePyramid>, Vec<BinaryMask>)> {
        let mut pyramids = Vec::with_capacity(count);
        let mut masks = Vec::with_capacity(count);
        for s in self.stream.batch(start, count)? {
            pyramids.push(crate::imgproc::build_pyramid(&s.image, self.levels, self.sigma_step)?);
            masks.push(s.mask);
        }
        Ok((pyramids, masks))
    }

    fn prepared(&self, start: u64, count: usize) -> Result<PreparedBatch<f32>> {
        let (p, m) = self.fetch(start, count)?;
        PreparedBatch::new(&p, &m, self.levels)
    }
}

/// Progress hooks; all methods default to no-ops.
pub trait StageSink {
    fn step(&mut self, _level: usize, _step: usize, _loss: f64) {}
    fn stage_done(&mut self, _model: &CascadeModel<f32>, _result: &StageResult) -> Result<()> {
        Ok(())
    }
}

impl StageSink for () {}

/// First sample index of stage `tag`'s training data.
fn stage_offset(tag: u64) -> u64 {
    (tag + 1) << 40
}

/// Call `f(step, batch)` for `steps` batches, synthesising ahead on a
/// second thread when `prefetch` is set. Batch contents depend only on the
/// indices, so both paths feed identical data.
fn for_each_batch(
    batcher: &Batcher,
    offset: u64,
    steps: usize,
    batch_size: usize,
    prefetch: bool,
    mut f: impl FnMut(usize, PreparedBatch<f32>) -> Result<()>,
) -> Result<()> {
    let start = |step: usize| offset + (step * batch_size) as u64;
    if !prefetch {
        for step in 0..steps {
            f(step, batcher.prepared(start(step), batch_size)?)?;
        }
        return Ok(());
    }
    thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel(PREFETCH_DEPTH);
        scope.spawn(move || {
            for step in 0..steps {
                if tx.send(batcher.prepared(start(step), batch_size)).is_err() {
                    break;
                }
            }
        });
        for step in 0..steps {
            let batch = rx
                .recv()
                .map_err(|_| Error::Contract("batch producer stopped early".into()))??;
            f(step, batch)?;
        }
        Ok(())
    })
}

fn check_finite(loss: f64, level: usize, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss {loss} at level {level}, step {step}"
        )));
    }
    Ok(())
}

/// Move gradients from the tape onto `params[range]`.
fn apply(
    mut grads: Gradients<f32>,
    vars: &[Var],
    params: &mut [Tensor<f32>],
    range: std::ops::Range<usize>,
    adam: &mut Adam<f32>,
) -> Result<()> {
    for i in range.clone() {
        let g = grads.take(vars[i]).ok_or_else(|| {
            Error::Contract(format!("trainable parameter {i} received no gradient"))
        })?;
        params[i].set_grad(g)?;
    }
    let mut refs: Vec<&mut Tensor<f32>> = params[range].iter_mut().collect();
    adam.step(&mut refs)?;
    for p in refs {
        p.clear_grad();
    }
    Ok(())
}

/// Cumulative mask at `level` for validation samples `start..start+count`.
fn predict_level(
    model: &CascadeModel<f32>,
    batcher: &Batcher,
    start: u64,
    count: usize,
    level: usize,
) -> Result<(Vec<SoftMask>, Vec<BinaryMask>)> {
    const CHUNK: usize = 8;
    let mut preds = Vec::with_capacity(count);
    let mut gts = Vec::with_capacity(count);
    let mut done = 0;
    while done < count {
        let n = CHUNK.min(count - done);
        let (pyrs, masks) = batcher.fetch(start + done as u64, n)?;
        let out = model.forward(&pyrs, level)?;
        let cum = &out.cumulative_masks[level];
        let [_, _, h, w] = cum.dims4()?;
        for (i, m) in masks.into_iter().enumerate() {
            preds.push(SoftMask::new(h, w, cum.data()[i * h * w..(i + 1) * h * w].to_vec())?);
            gts.push(m);
        }
        done += n;
    }
    Ok((preds, gts))
}

fn calibrate_level(
    model: &CascadeModel<f32>,
    validation: &Batcher,
    config: &StageConfig,
) -> Result<Calibration> {
    let (preds, gts) = predict_level(
        model,
        validation,
        stage_offset(config.level as u64),
        config.validation_samples,
        config.level,
    )?;
    calibrate(&preds, &gts, config.p_min, config.r_min, config.threshold_grid)
}

/// Optimise level `config.level` with every coarser level frozen, then
/// calibrate its threshold on validation samples.
pub fn train_stage(
    model: &mut CascadeModel<f32>,
    train: &Batcher,
    validation: &Batcher,
    config: &StageConfig,
    prefetch: bool,
    sink: &mut dyn StageSink,
) -> Result<StageResult> {
    config.validate()?;
    let level = config.level;
    if level >= model.num_levels() {
        return Err(Error::Argument(format!(
            "stage {level} of a {}-level model",
            model.num_levels()
        )));
    }
    if level > 0 && config.warm_start {
        let copied = model.warm_start_level(level)?;
        log::debug!("level {level} warm-started from {copied} coarser tensors");
    }
    let range = model.config().level_range(level);
    let frozen = 0..range.start;
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut loss_curve = Vec::with_capacity(config.steps);
    let mut alpha_clamps = 0;
    for_each_batch(
        train,
        stage_offset(level as u64),
        config.steps,
        config.batch_size,
        prefetch,
        |step, batch| {
            alpha_clamps += batch.clamped;
            let graph = stage_graph(model, &batch, level)?;
            let loss = f64::from(graph.loss_value());
            check_finite(loss, level, step)?;
            let grads = graph.tape.backward(graph.loss)?;
            if let Some(i) = frozen.clone().find(|&i| grads.get(graph.params[i]).is_some()) {
                return Err(Error::Contract(format!(
                    "frozen parameter {i} received a gradient at level {level}"
                )));
            }
            apply(grads, &graph.params, model.params_mut(), range.clone(), &mut adam)?;
            loss_curve.push(loss);
            sink.step(level, step, loss);
            Ok(())
        },
    )?;
    let calibration = calibrate_level(model, validation, config)?;
    let result = StageResult {
        level,
        calibration,
        loss_curve,
        alpha_clamps,
    };
    sink.stage_done(model, &result)?;
    Ok(result)
}

/// Stages `0..L` in order, coarse to fine.
pub fn train_cascade(
    model: &mut CascadeModel<f32>,
    train: &Batcher,
    validation: &Batcher,
    stages: &[StageConfig],
    prefetch: bool,
    sink: &mut dyn StageSink,
) -> Result<Vec<StageResult>> {
    if stages.len() != model.num_levels() || stages.iter().enumerate().any(|(l, s)| s.level != l) {
        return Err(Error::Argument(format!(
            "need stage configs for levels 0..{} in order",
            model.num_levels()
        )));
    }
    stages
        .iter()
        .map(|s| train_stage(model, train, validation, s, prefetch, sink))
        .collect()
}

/// Joint baseline: one optimiser over every parameter for the summed step
/// budget of all stages, using the finest stage's batch size and rate.
/// Returns one result per level; the loss curve sits on the last one.
pub fn train_joint(
    model: &mut CascadeModel<f32>,
    train: &Batcher,
    validation: &Batcher,
    stages: &[StageConfig],
    prefetch: bool,
    sink: &mut dyn StageSink,
) -> Result<Vec<StageResult>> {
    let last = stages
        .last()
        .ok_or_else(|| Error::Argument("no stage configs".into()))?;
    last.validate()?;
    let steps: usize = stages.iter().map(|s| s.steps).sum();
    let mut adam = Adam::new(AdamConfig {
        learning_rate: last.learning_rate,
        ..AdamConfig::default()
    });
    let all = 0..model.params().len();
    let top = model.num_levels() - 1;
    let mut loss_curve = Vec::with_capacity(steps);
    let mut alpha_clamps = 0;
    for_each_batch(train, stage_offset(0), steps, last.batch_size, prefetch, |step, batch| {
        alpha_clamps += batch.clamped;
        let graph = joint_graph(model, &batch)?;
        let loss = f64::from(graph.loss_value());
        check_finite(loss, top, step)?;
        let grads = graph.tape.backward(graph.loss)?;
        apply(grads, &graph.params, model.params_mut(), all.clone(), &mut adam)?;
        loss_curve.push(loss);
        sink.step(top, step, loss);
        Ok(())
    })?;
    let mut results = Vec::with_capacity(stages.len());
    for s in stages {
        results.push(StageResult {
            level: s.level,
            calibration: calibrate_level(model, validation, s)?,
            loss_curve: Vec::new(),
            alpha_clamps: 0,
        });
    }
    let r = results.last_mut().expect("nonempty");
    r.loss_curve = loss_curve;
    r.alpha_clamps = alpha_clamps;
    sink.stage_done(model, r)?;
    Ok(results)
}

pub struct TrainOutcome {
    pub model: CascadeModel<f32>,
    pub manifest: ModelManifest,
    pub stages: Vec<StageResult>,
}

/// Writes a checkpoint after every stage.
struct CheckpointSink<'a, 'b> {
    dir: &'a Path,
    manifest: ModelManifest,
    inner: &'b mut dyn StageSink,
}

impl StageSink for CheckpointSink<'_, '_> {
    fn step(&mut self, level: usize, step: usize, loss: f64) {
        self.inner.step(level, step, loss);
    }

    fn stage_done(&mut self, model: &CascadeModel<f32>, result: &StageResult) -> Result<()> {
        self.manifest.step += result.loss_curve.len() as u64;
        self.manifest.thresholds.push(result.calibration.threshold);
        let path = self.dir.join(format!("stage{}.json", result.level));
        self.manifest = save_model(&path, model, &self.manifest)?;
        self.inner.stage_done(model, result)
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn calibration_warnings(results: &[StageResult], stages: &[StageConfig]) -> Vec<String> {
    let mut out = Vec::new();
    for r in results {
        let s = &stages[r.level];
        let c = &r.calibration;
        if !c.recall_feasible {
            out.push(format!(
                "level {}: no threshold reaches recall {} (best {:.4} at {:.2})",
                r.level, s.r_min, c.recall, c.threshold
            ));
        } else if !c.precision_feasible {
            out.push(format!(
                "level {}: precision {:.4} at threshold {:.2} is below {}",
                r.level, c.precision, c.threshold, s.p_min
            ));
        }
    }
    out
}

/// Full training run. With `out_dir`, writes `config.json`, a checkpoint
/// per stage, `model.json` (final), `loss_curve.csv` and `calibration.json`.
/// `resume` names a stage checkpoint; training continues with the next
/// stage and only the remaining stages appear in the outcome.
pub fn run_training(
    config: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<&Path>,
    sink: &mut dyn StageSink,
) -> Result<TrainOutcome> {
    config.validate()?;
    let stages = config.stage_configs();
    let (mut model, mut manifest) = match resume {
        None => {
            let model = CascadeModel::<f32>::new(config.model.clone(), config.seed)?;
            let manifest = ModelManifest::new(&model, config.seed);
            (model, manifest)
        }
        Some(path) => {
            if config.mode != TrainMode::Stagewise {
                return Err(Error::config("mode", "only stage-wise runs can resume"));
            }
            let (model, manifest) = load_model(path)?;
            if model.config() != &config.model {
                return Err(Error::config(
                    "model",
                    format!("differs from the configuration stored in {}", path.display()),
                ));
            }
            if manifest.thresholds.len() >= stages.len() {
                return Err(Error::Argument(format!(
                    "{} already holds every stage",
                    path.display()
                )));
            }
            (model, manifest)
        }
    };
    let done = manifest.thresholds.len();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(CONFIG_FILE), config)?;
    }
    let stream = SampleStream::new(config.data.clone(), config.seed)?;
    let val_seed = derive_seed(config.seed, stream_tag("validation"), 0);
    let val_stream = SampleStream::new(config.data.clone(), val_seed)?;
    let train = Batcher::new(&stream, &config.model);
    let validation = Batcher::new(&val_stream, &config.model);

    let mut ckpt_sink;
    let sink: &mut dyn StageSink = match out_dir {
        Some(dir) => {
            ckpt_sink = CheckpointSink {
                dir,
                manifest: manifest.clone(),
                inner: sink,
            };
            &mut ckpt_sink
        }
        None => sink,
    };
    let results = match config.mode {
        TrainMode::Stagewise => stages[done..]
            .iter()
            .map(|s| train_stage(&mut model, &train, &validation, s, config.prefetch, sink))
            .collect::<Result<Vec<_>>>()?,
        TrainMode::Joint => {
            train_joint(&mut model, &train, &validation, &stages, config.prefetch, sink)?
        }
    };

    let top = model.num_levels() - 1;
    let last = &stages[top];
    let (preds, gts) = predict_level(
        &model,
        &validation,
        stage_offset(model.num_levels() as u64),
        last.validation_samples,
        top,
    )?;
    manifest.step += results.iter().map(|r| r.loss_curve.len() as u64).sum::<u64>();
    manifest
        .thresholds
        .extend(results.iter().map(|r| r.calibration.threshold));
    manifest.miou_threshold = Some(select_miou_threshold(&preds, &gts, last.threshold_grid)?);
    manifest.warnings.extend(calibration_warnings(&results, &stages));
    for w in &manifest.warnings {
        log::warn!("{w}");
    }

    if let Some(dir) = out_dir {
        manifest = save_model(&dir.join("model.json"), &model, &manifest)?;
        let mut csv = String::from("stage,step,loss\n");
        for r in &results {
            for (i, l) in r.loss_curve.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{:e}", r.level, i, l);
            }
        }
        let path = dir.join(LOSS_CURVE_FILE);
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        let calib: Vec<_> = results
            .iter()
            .map(|r| {
                serde_json::json!({
                    "level": r.level,
                    "calibration": r.calibration,
                    "alpha_clamps": r.alpha_clamps,
                })
            })
            .collect();
        write_json(
            &dir.join(CALIBRATION_FILE),
            &serde_json::json!({
                "stages": calib,
                "miou_threshold": manifest.miou_threshold,
                "warnings": manifest.warnings,
            }),
        )?;
    }
    Ok(TrainOutcome {
        model,
        manifest,
        stages: results,
    })
}
