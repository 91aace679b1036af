//! Multi-task loss, the training loop, evaluation with baselines, and the
//! JSON run record.

use std::path::{Path, PathBuf};
use std::time::Instant;

use bapn_autodiff::{AdError, AdamConfig, BnMode, Real, Tape, Tensor, Var};
use bapn_core::dsp::{apply_complex_mask, rms, ComplexMask, DspError, StftPlan, Waveform, SILENCE_FLOOR};
use bapn_core::grid::Grid;
use bapn_core::metrics::{depth_metrics, miou, s3r_metrics, target_class_ids, DepthReport, S3RReport, SemanticReport};
use bapn_core::rig::Orientation;
use bapn_core::scene::{LabelGrid, Scene, SceneRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, InputSelection, KeyValue, LossWeights, ModelConfig};
use crate::data::{encoder_input, make_batch, Batch, Dataset};
use crate::net::{Model, ModelOutput, OutputVars, CLASSES};
use crate::ModelError;

/// Scenes per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 4;

/// Tape handles of the individual task losses.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossVars {
    pub semantic: Option<Var>,
    pub depth: Option<Var>,
    pub s3r: Option<Var>,
}

/// Scalar loss values; disabled tasks stay at 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub semantic: f64,
    pub depth: f64,
    pub s3r: f64,
    pub total: f64,
}

impl LossParts {
    fn read<T: Real>(tape: &Tape<T>, vars: &LossVars, total: Var) -> Self {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item().to_f64());
        Self {
            semantic: get(vars.semantic),
            depth: get(vars.depth),
            s3r: get(vars.s3r),
            total: tape.value(total).item().to_f64(),
        }
    }

    fn scale_add(&mut self, other: &LossParts, w: f64) {
        self.semantic += w * other.semantic;
        self.depth += w * other.depth;
        self.s3r += w * other.s3r;
        self.total += w * other.total;
    }
}

/// `semantic + λ1·depth + λ2·s3r` over the losses that are present.
pub fn combine_losses<T: Real>(tape: &mut Tape<T>, parts: &LossVars, w: LossWeights) -> Result<Var, ModelError> {
    let mut terms = Vec::new();
    if let Some(v) = parts.semantic {
        terms.push((v, T::ONE));
    }
    if let Some(v) = parts.depth {
        terms.push((v, T::from_f64(w.lambda1)));
    }
    if let Some(v) = parts.s3r {
        terms.push((v, T::from_f64(w.lambda2)));
    }
    if terms.is_empty() {
        return Err(ModelError::Config("no task enabled".into()));
    }
    Ok(tape.weighted_sum(&terms)?)
}

/// Semantic loss weight per class: background 1, targets `foreground`.
pub fn class_weights<T: Real>(foreground: f64) -> Vec<T> {
    (0..CLASSES).map(|c| T::from_f64(if c == 0 { 1.0 } else { foreground })).collect()
}

/// Cross-entropy on labels, MSE on far-normalized depth and complex MSE of
/// the masked reference against the difference spectrograms, each only
/// for tasks the forward pass produced.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    out: &OutputVars,
    batch: &Batch,
    w: LossWeights,
    weights: Option<&[T]>,
) -> Result<(Var, LossVars), ModelError> {
    let mut parts = LossVars::default();
    if let Some(logits) = out.semantic_logits {
        if batch.labels.is_empty() {
            return Err(ModelError::MissingTarget("semantic"));
        }
        parts.semantic = Some(tape.cross_entropy(logits, &batch.labels, weights)?);
    }
    if let Some(d) = out.depth_norm {
        if batch.depth.is_empty() {
            return Err(ModelError::MissingTarget("depth"));
        }
        parts.depth = Some(tape.mse(d, &batch.depth.cast())?);
    }
    if let Some(m) = out.s3r_masks {
        let (Some(spec), Some(target)) = (&batch.s3r_spec, &batch.s3r_target) else {
            return Err(ModelError::MissingTarget("s3r"));
        };
        parts.s3r = Some(tape.complex_mask_mse(m, &spec.cast(), &target.cast())?);
    }
    let total = combine_losses(tape, &parts, w)?;
    Ok((total, parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's optimization steps.
    pub train: LossParts,
    /// Eval-mode loss on the validation split.
    pub val: Option<LossParts>,
    pub val_miou: Option<f64>,
}

/// Copy-reference and mean-depth reference points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Mean depth of the training split, predicted for every cell.
    pub mean_depth_value: Option<f64>,
    pub mean_depth: Option<DepthReport>,
    /// Every rotated pair predicted as a copy of the front pair.
    pub copy_reference: Option<S3RReport>,
    /// Spectrogram MSE per target pair (degrees, mean over both ears).
    pub copy_reference_per_pair: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub semantic: Option<SemanticReport>,
    pub depth: Option<DepthReport>,
    pub s3r: Option<S3RReport>,
    pub s3r_per_pair: Vec<(u32, f64)>,
    pub baselines: Baselines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub tasks: String,
    pub inputs: String,
    pub seed: u64,
    pub train_scenes: usize,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub steps: usize,
    pub test: Option<EvalReport>,
    pub wall_time_s: f64,
    pub checkpoint: Option<String>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    /// JSON with timing fields zeroed, for reproducibility comparisons.
    pub fn untimed_json(&self) -> String {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        r.to_json()
    }

    pub fn test_miou(&self) -> Option<f64> {
        self.test.as_ref()?.semantic.as_ref().map(|s| s.mean_iou)
    }
}

/// SHA-256 of the model and experiment settings.
pub fn config_hash(model: &ModelConfig, exp: &ExperimentConfig) -> String {
    let text = format!("{}{}", model.to_text(), exp.to_text());
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Where and how loudly a run reports.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoints, `model.cfg` and `record.json` go here when set.
    pub out_dir: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub progress: bool,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last one without validation).
    pub model: Model,
    pub record: RunRecord,
}

/// Fixes the data-derived model settings: spectrogram shape and input gain.
pub fn fit_model_config(cfg: &ModelConfig, train: &Dataset) -> Result<ModelConfig, ModelError> {
    let plan = StftPlan::new(cfg.window, cfg.hop)?;
    let mut cfg = cfg.clone();
    cfg.spec_shape = train
        .spec_shape(&plan)
        .ok_or_else(|| ModelError::DataMissing("training split is empty".into()))?;
    cfg.input_gain = train.input_gain()?;
    cfg.validate()?;
    Ok(cfg)
}

fn chunks(data: &Dataset) -> impl Iterator<Item = Vec<&SceneRecord>> {
    data.records.chunks(EVAL_CHUNK).map(|c| c.iter().collect())
}

fn argmax_labels(probs: &Tensor<f32>) -> Vec<LabelGrid> {
    let [n, k, h, w] = probs.dims4().unwrap();
    let d = probs.data();
    (0..n)
        .map(|i| {
            Grid::from_fn(h, w, |r, c| {
                let mut best = 0;
                for j in 1..k {
                    if d[((i * k + j) * h + r) * w + c] > d[((i * k + best) * h + r) * w + c] {
                        best = j;
                    }
                }
                best as u8
            })
        })
        .collect()
}

/// Eval-mode loss and, with the semantic task enabled, mIoU over a split.
pub fn score(model: &Model, data: &Dataset, exp: &ExperimentConfig) -> Result<(LossParts, Option<SemanticReport>), ModelError> {
    let plan = StftPlan::new(model.cfg.window, model.cfg.hop)?;
    let weights = class_weights::<f32>(exp.foreground_weight);
    let mut parts = LossParts::default();
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for recs in chunks(data) {
        let batch = make_batch(&model.cfg, &plan, &recs)?;
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(batch.inputs.clone())?;
        let (out, _) = model.forward(&mut tape, x, BnMode::Eval)?;
        let (total, vars) = total_loss(&mut tape, &out, &batch, exp.weights, Some(&weights))?;
        parts.scale_add(&LossParts::read(&tape, &vars, total), recs.len() as f64 / data.len() as f64);
        if let Some(l) = out.semantic_logits {
            let p = tape.softmax(l, 1)?;
            preds.extend(argmax_labels(tape.value(p)));
            gts.extend(recs.iter().map(|r| r.labels.clone()));
        }
    }
    let sem = if model.cfg.tasks.semantic {
        Some(miou(&preds, &gts, &target_class_ids())?)
    } else {
        None
    };
    Ok((parts, sem))
}

fn mask_grid(m: &Tensor<f32>, i: usize, c: usize) -> Grid<f64> {
    let [_, ch, f, t] = m.dims4().unwrap();
    let plane = &m.data()[(i * ch + c) * f * t..][..f * t];
    Grid::from_vec(f, t, plane.iter().map(|&v| (v as f64).clamp(-1.0, 1.0)).collect()).unwrap()
}

fn per_pair(report: &S3RReport, pairs: &[Orientation]) -> Vec<(u32, f64)> {
    let n = pairs.len().max(1);
    let per_scene = report.mse_per_channel.len() / (2 * n);
    pairs
        .iter()
        .enumerate()
        .map(|(q, o)| {
            let mut s = 0.0;
            for i in 0..per_scene {
                s += report.mse_per_channel[i * 2 * n + 2 * q] + report.mse_per_channel[i * 2 * n + 2 * q + 1];
            }
            (o.degrees(), s / (2 * per_scene).max(1) as f64)
        })
        .collect()
}

/// Rotated-pair waveforms from predicted masks: `ref − istft(M ⊙ STFT(ref))`.
pub fn reconstruct_pairs(
    cfg: &ModelConfig,
    record: &SceneRecord,
    masks: &Tensor<f32>,
    index: usize,
) -> Result<Vec<[Waveform; 2]>, ModelError> {
    let plan = StftPlan::new(cfg.window, cfg.hop)?;
    let mut out = Vec::new();
    for q in 0..cfg.target_pairs.len() {
        let mut pair = Vec::with_capacity(2);
        for ear in 0..2 {
            let reference = Waveform::from_f32(&record.pair(Orientation::Deg0)[ear], record.sample_rate)?;
            let spec = plan.forward(&reference)?;
            let mask = ComplexMask::new(
                mask_grid(masks, index, 4 * q + 2 * ear),
                mask_grid(masks, index, 4 * q + 2 * ear + 1),
            )?;
            let diff = plan.inverse(&apply_complex_mask(&spec, &mask)?)?;
            pair.push(reference.sub(&diff)?);
        }
        let [l, r]: [Waveform; 2] = pair.try_into().unwrap();
        out.push([l, r]);
    }
    Ok(out)
}

/// Eval-mode prediction for a list of scenes, in chunks.
pub fn predict_records(model: &Model, recs: &[&SceneRecord]) -> Result<Vec<ModelOutput>, ModelError> {
    let plan = StftPlan::new(model.cfg.window, model.cfg.hop)?;
    recs.chunks(EVAL_CHUNK)
        .map(|c| model.predict(encoder_input(&model.cfg, &plan, c)?))
        .collect()
}

/// Rotated-pair predictions for one front-pair stereo clip.
#[derive(Debug, Clone, PartialEq)]
pub struct S3rInference {
    /// One entry per configured target pair.
    pub pairs: Vec<(Orientation, [Waveform; 2])>,
    /// Samples the clip had before it was center-cropped or zero-padded to
    /// the model length; `None` when it already matched.
    pub resized_from: Option<usize>,
}

/// Center-crops or zero-pads `x` to `len` samples.
fn fit_length(x: &[f32], len: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; len];
    if x.len() >= len {
        let start = (x.len() - len) / 2;
        out.copy_from_slice(&x[start..start + len]);
    } else {
        let start = (len - x.len()) / 2;
        out[start..start + x.len()].copy_from_slice(x);
    }
    out
}

/// Predicts the rotated pairs from a front-pair clip. The clip is fitted to
/// the length the model was trained on; the outputs share that length.
pub fn infer_s3r(model: &Model, left: &[f32], right: &[f32], sample_rate: u32) -> Result<S3rInference, ModelError> {
    let cfg = &model.cfg;
    if !cfg.tasks.s3r {
        return Err(ModelError::Config("checkpoint has no S3R decoder".into()));
    }
    if cfg.inputs != InputSelection::Pairs(vec![Orientation::Deg0]) {
        return Err(ModelError::Config("S3R inference needs a model fed by the front pair alone".into()));
    }
    if left.len() != right.len() {
        return Err(DspError::ShapeMismatch(format!("channel lengths {} and {}", left.len(), right.len())).into());
    }
    let all: Vec<f64> = left.iter().chain(right).map(|&v| v as f64).collect();
    let level = rms(&all);
    if level < SILENCE_FLOOR {
        return Err(DspError::SilentInput { rms: level }.into());
    }
    let len = (cfg.spec_shape.1 - 1) * cfg.hop;
    let resized_from = (left.len() != len).then_some(left.len());
    let front = [fit_length(left, len), fit_length(right, len)];
    let duration = len as f64 / sample_rate as f64;
    let grid = Grid::filled(cfg.output_grid.0, cfg.output_grid.1, 0u8);
    let record = SceneRecord {
        id: "input".into(),
        scene: Scene::new(Vec::new(), 0.0, duration, 0)?,
        sample_rate,
        pairs: std::array::from_fn(|_| front.clone()),
        depth: grid.map(|_| cfg.far_depth),
        labels: grid,
    };
    let plan = StftPlan::new(cfg.window, cfg.hop)?;
    let out = model.predict(encoder_input(cfg, &plan, &[&record])?)?;
    let masks = out.s3r_masks.ok_or(ModelError::MissingTarget("s3r masks"))?;
    let pairs = cfg
        .target_pairs
        .iter()
        .copied()
        .zip(reconstruct_pairs(cfg, &record, &masks, 0)?)
        .collect();
    Ok(S3rInference { pairs, resized_from })
}

/// Full evaluation of a split plus the two reference baselines.
/// `mean_depth` is the training-split mean used by the depth baseline.
pub fn evaluate(model: &Model, data: &Dataset, mean_depth: Option<f64>) -> Result<EvalReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::DataMissing("evaluation split is empty".into()));
    }
    let cfg = &model.cfg;
    let plan = StftPlan::new(cfg.window, cfg.hop)?;
    let (mut labels, mut depths) = (Vec::new(), Vec::new());
    let (mut s3r_pred, mut s3r_gt, mut s3r_copy) = (Vec::new(), Vec::new(), Vec::new());
    for recs in chunks(data) {
        let out = model.predict(encoder_input(cfg, &plan, &recs)?)?;
        if let Some(p) = &out.semantic {
            labels.extend(argmax_labels(p));
        }
        if let Some(d) = &out.depth {
            let [n, _, h, w] = d.dims4().unwrap();
            for i in 0..n {
                depths.push(Grid::from_vec(h, w, d.data()[i * h * w..][..h * w].iter().map(|&v| v as f64).collect()).unwrap());
            }
        }
        if let Some(m) = &out.s3r_masks {
            for (i, r) in recs.iter().enumerate() {
                let preds = reconstruct_pairs(cfg, r, m, i)?;
                for (q, &alpha) in cfg.target_pairs.iter().enumerate() {
                    for ear in 0..2 {
                        let gt = Waveform::from_f32(&r.pair(alpha)[ear], r.sample_rate)?;
                        s3r_copy.push(Waveform::from_f32(&r.pair(Orientation::Deg0)[ear], r.sample_rate)?);
                        s3r_pred.push(preds[q][ear].clone());
                        s3r_gt.push(gt);
                    }
                }
            }
        }
    }
    let gt_labels: Vec<LabelGrid> = data.records.iter().map(|r| r.labels.clone()).collect();
    let gt_depth: Vec<Grid<f64>> = data.records.iter().map(|r| r.depth.clone()).collect();
    let semantic = if cfg.tasks.semantic {
        Some(miou(&labels, &gt_labels, &target_class_ids())?)
    } else {
        None
    };
    let depth = if cfg.tasks.depth {
        Some(depth_metrics(&depths, &gt_depth, cfg.far_depth)?)
    } else {
        None
    };
    let mean_depth_report = match mean_depth {
        Some(m) => {
            let preds: Vec<Grid<f64>> = gt_depth.iter().map(|g| Grid::filled(g.rows(), g.cols(), m)).collect();
            Some(depth_metrics(&preds, &gt_depth, cfg.far_depth)?)
        }
        None => None,
    };
    let (s3r, s3r_per_pair, copy, copy_per_pair) = if cfg.tasks.s3r {
        let s = s3r_metrics(&s3r_pred, &s3r_gt, &plan)?;
        let c = s3r_metrics(&s3r_copy, &s3r_gt, &plan)?;
        let (sp, cp) = (per_pair(&s, &cfg.target_pairs), per_pair(&c, &cfg.target_pairs));
        (Some(s), sp, Some(c), cp)
    } else {
        (None, Vec::new(), None, Vec::new())
    };
    Ok(EvalReport {
        scenes: data.len(),
        semantic,
        depth,
        s3r,
        s3r_per_pair,
        baselines: Baselines {
            mean_depth_value: mean_depth,
            mean_depth: mean_depth_report,
            copy_reference: copy,
            copy_reference_per_pair: copy_per_pair,
        },
    })
}

fn diverged(e: ModelError, epoch: usize, step: usize, record: &RunRecord) -> ModelError {
    match e {
        ModelError::Ad(AdError::NonFinite(_)) => ModelError::DivergedLoss {
            epoch,
            step,
            record: Box::new(record.clone()),
        },
        e => e,
    }
}

fn write_record(dir: Option<&Path>, record: &RunRecord) -> Result<(), ModelError> {
    if let Some(dir) = dir {
        let path = dir.join("record.json");
        std::fs::write(&path, record.to_json()).map_err(|e| bapn_core::io::IoError::at(&path, e))?;
    }
    Ok(())
}

/// One optimization step on `batch`. Returns the loss values.
pub fn train_step(model: &mut Model, batch: &Batch, exp: &ExperimentConfig, adam: &AdamConfig) -> Result<LossParts, ModelError> {
    let weights = class_weights::<f32>(exp.foreground_weight);
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(batch.inputs.clone())?;
    let (out, stats) = model.forward(&mut tape, x, BnMode::Train)?;
    let (total, vars) = total_loss(&mut tape, &out, batch, exp.weights, Some(&weights))?;
    let parts = LossParts::read(&tape, &vars, total);
    let grads = tape.backward(total)?;
    model.store.zero_grad();
    model.store.accumulate(&grads);
    model.store.adam_step(adam)?;
    model.update_running_stats(&stats);
    Ok(parts)
}

/// Trains from seeded initialization. With a validation split the best
/// epoch (by validation mIoU, ties broken by validation loss) is kept
/// and training stops after `patience` epochs without improvement. With a
/// test split the kept model is evaluated into the record.
pub fn train(
    model_cfg: &ModelConfig,
    exp: &ExperimentConfig,
    train_set: &Dataset,
    val: Option<&Dataset>,
    test: Option<&Dataset>,
    opts: &TrainOptions,
) -> Result<TrainOutcome, ModelError> {
    let start = Instant::now();
    exp.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::DataMissing("training split is empty".into()));
    }
    let cfg = fit_model_config(model_cfg, train_set)?;
    let plan = StftPlan::new(cfg.window, cfg.hop)?;
    let mut model = Model::new(cfg.clone(), exp.seed)?;
    let adam = AdamConfig::with_lr(exp.lr);
    let out_dir = opts.out_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| bapn_core::io::IoError::at(dir, e))?;
    }
    let mut record = RunRecord {
        config_hash: config_hash(&cfg, exp),
        tasks: cfg.tasks.label(),
        inputs: cfg.inputs.to_string(),
        seed: exp.seed,
        train_scenes: train_set.len(),
        epochs: Vec::new(),
        best_epoch: None,
        steps: 0,
        test: None,
        wall_time_s: 0.0,
        checkpoint: None,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(exp.seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<((f64, f64), Model)> = None;
    let mut since_best = 0;
    for epoch in 0..exp.epochs {
        order.shuffle(&mut order_rng);
        let mut mean = LossParts::default();
        let steps = order.len().div_ceil(exp.batch);
        for (s, idx) in order.chunks(exp.batch).enumerate() {
            let recs: Vec<&SceneRecord> = idx.iter().map(|&i| &train_set.records[i]).collect();
            let batch = make_batch(&cfg, &plan, &recs)?;
            let parts = train_step(&mut model, &batch, exp, &adam).map_err(|e| diverged(e, epoch, s, &record))?;
            mean.scale_add(&parts, 1.0 / steps as f64);
            record.steps += 1;
        }
        let (val_parts, val_sem) = match val {
            Some(v) if !v.is_empty() => {
                let (p, s) = score(&model, v, exp).map_err(|e| diverged(e, epoch, steps, &record))?;
                (Some(p), s)
            }
            _ => (None, None),
        };
        let log = EpochLog {
            epoch,
            train: mean,
            val: val_parts,
            val_miou: val_sem.map(|s| s.mean_iou),
        };
        if opts.progress {
            eprintln!(
                "epoch {epoch}: train loss {:.4} (ce {:.4}, depth {:.4}, s3r {:.4}){}",
                mean.total,
                mean.semantic,
                mean.depth,
                mean.s3r,
                match (log.val, log.val_miou) {
                    (Some(v), Some(m)) => format!(", val loss {:.4}, val mIoU {m:.4}", v.total),
                    (Some(v), None) => format!(", val loss {:.4}", v.total),
                    _ => String::new(),
                }
            );
        }
        // Validation mIoU first, validation loss breaks ties.
        let score_now = log.val.map(|v| (log.val_miou.unwrap_or(0.0), -v.total));
        record.epochs.push(log);
        if let Some(dir) = out_dir {
            model.save(&dir.join("last.ckpt"))?;
        }
        match score_now {
            Some(sc) if best.as_ref().is_none_or(|(b, _)| sc > *b) => {
                best = Some((sc, model.clone()));
                record.best_epoch = Some(epoch);
                since_best = 0;
                if let Some(dir) = out_dir {
                    model.save(&dir.join("best.ckpt"))?;
                }
            }
            Some(_) => since_best += 1,
            None => record.best_epoch = Some(epoch),
        }
        write_record(out_dir, &record)?;
        if since_best >= exp.patience.max(1) {
            break;
        }
    }
    let model = match best {
        Some((_, m)) => m,
        None => {
            if let Some(dir) = out_dir {
                model.save(&dir.join("best.ckpt"))?;
            }
            model
        }
    };
    record.checkpoint = out_dir.map(|d| d.join("best.ckpt").display().to_string());
    if let Some(t) = test {
        record.test = Some(evaluate(&model, t, train_set.mean_depth())?);
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    write_record(out_dir, &record)?;
    Ok(TrainOutcome { model, record })
}
