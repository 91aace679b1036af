//! Scene sets and batch assembly: log-magnitude encoder inputs, label and
//! depth targets, and the complex spectrograms the S³R loss needs.

use std::path::Path;

use bapn_autodiff::Tensor;
use bapn_core::dsp::{log_magnitude, ComplexSpectrogram, DspError, StftPlan, Waveform, DEFAULT_TARGET_RMS, SILENCE_FLOOR};
use bapn_core::rig::Orientation;
use bapn_core::scene::{split_ranges, GeneratorConfig, Manifest, SceneRecord, Split};

use crate::config::ModelConfig;
use crate::ModelError;

/// Scenes of one split held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SceneRecord>,
}

impl Dataset {
    pub fn new(records: Vec<SceneRecord>) -> Self {
        Self { records }
    }

    /// Reads a split written by `write_dataset`.
    pub fn load(root: &Path, split: Split) -> Result<Self, ModelError> {
        let path = Manifest::path(root, split);
        if !path.exists() {
            return Err(ModelError::DataMissing(format!("no manifest at {}", path.display())));
        }
        let manifest = Manifest::load(root, split)?;
        let dir = root.join(split.name());
        let records = manifest
            .scene_ids
            .iter()
            .map(|id| SceneRecord::load(&dir.join(id), id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }

    /// Generates a split in memory, identical to what `write_dataset` stores.
    pub fn synthesize(cfg: &GeneratorConfig, split: Split) -> Result<Self, ModelError> {
        cfg.validate()?;
        let range = split_ranges(cfg.scenes)
            .into_iter()
            .find(|(s, _)| *s == split)
            .map(|(_, r)| r)
            .unwrap_or(0..0);
        let records = range.map(|i| SceneRecord::synthesize(cfg, i)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sample_rate(&self) -> Option<u32> {
        self.records.first().map(|r| r.sample_rate)
    }

    /// Gain that brings the mean channel RMS of the set to 0.1. One gain
    /// for every channel keeps interaural level differences intact.
    pub fn input_gain(&self) -> Result<f64, ModelError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in &self.records {
            for pair in &r.pairs {
                for ch in pair {
                    let ss: f64 = ch.iter().map(|&v| (v as f64) * (v as f64)).sum();
                    sum += (ss / ch.len().max(1) as f64).sqrt();
                    n += 1;
                }
            }
        }
        let mean = if n == 0 { 0.0 } else { sum / n as f64 };
        if mean <= SILENCE_FLOOR {
            return Err(DspError::SilentInput { rms: mean }.into());
        }
        Ok(DEFAULT_TARGET_RMS / mean)
    }

    /// Mean ground-truth depth over every cell of the set.
    pub fn mean_depth(&self) -> Option<f64> {
        let cells: usize = self.records.iter().map(|r| r.depth.as_slice().len()).sum();
        if cells == 0 {
            return None;
        }
        let sum: f64 = self.records.iter().flat_map(|r| r.depth.as_slice()).sum();
        Some(sum / cells as f64)
    }

    /// Spectrogram shape of the clips under `plan`.
    pub fn spec_shape(&self, plan: &StftPlan) -> Option<(usize, usize)> {
        self.records
            .first()
            .map(|r| (plan.freq_bins(), plan.frames_for(r.pairs[0][0].len())))
    }
}

/// Tensors for one optimization step or evaluation chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    /// `[branches·n, 1, F, T]`, branch-major.
    pub inputs: Tensor<f32>,
    /// Class id per cell, `n·rows·cols` in row-major order.
    pub labels: Vec<usize>,
    /// Depth divided by the far depth, `[n, 1, rows, cols]`.
    pub depth: Tensor<f32>,
    /// Front-pair spectrogram `[n, 4, F, T]` as (re, im) per ear.
    pub s3r_spec: Option<Tensor<f32>>,
    /// Difference spectrograms `[n, 4·pairs, F, T]` laid out like the masks.
    pub s3r_target: Option<Tensor<f32>>,
}

fn spectrogram(plan: &StftPlan, samples: &[f32], sr: u32, gain: f64) -> Result<ComplexSpectrogram, ModelError> {
    Ok(plan.forward(&Waveform::from_f32(samples, sr)?.scaled(gain))?)
}

fn check_shape(s: &ComplexSpectrogram, cfg: &ModelConfig) -> Result<(), ModelError> {
    let got = (s.freq_bins(), s.frames());
    if got != cfg.spec_shape {
        return Err(DspError::ShapeMismatch(format!("spectrogram {got:?}, model expects {:?}", cfg.spec_shape)).into());
    }
    Ok(())
}

/// Encoder input for the selected microphones: `ln(1 + |STFT(gain·x)|)`.
pub fn encoder_input(cfg: &ModelConfig, plan: &StftPlan, records: &[&SceneRecord]) -> Result<Tensor<f32>, ModelError> {
    let (f, t) = cfg.spec_shape;
    let branches = cfg.inputs.branches();
    let n = records.len();
    let mut data = vec![0.0f32; branches.len() * n * f * t];
    for (b, &(o, ear)) in branches.iter().enumerate() {
        for (i, r) in records.iter().enumerate() {
            let s = spectrogram(plan, &r.pair(o)[ear], r.sample_rate, cfg.input_gain)?;
            check_shape(&s, cfg)?;
            let dst = &mut data[(b * n + i) * f * t..][..f * t];
            for (d, v) in dst.iter_mut().zip(log_magnitude(&s).as_slice()) {
                *d = *v as f32;
            }
        }
    }
    Ok(Tensor::new(&[branches.len() * n, 1, f, t], data).unwrap())
}

fn write_complex(dst: &mut [f32], s: &ComplexSpectrogram, sub: Option<&ComplexSpectrogram>) {
    let plane = dst.len() / 2;
    let (re, im) = dst.split_at_mut(plane);
    for (k, z) in s.bins().as_slice().iter().enumerate() {
        let z = match sub {
            Some(o) => z - o.bins().as_slice()[k],
            None => *z,
        };
        re[k] = z.re as f32;
        im[k] = z.im as f32;
    }
}

/// Reference spectrograms and difference targets for the S³R loss.
pub fn s3r_tensors(cfg: &ModelConfig, plan: &StftPlan, records: &[&SceneRecord]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
    let (f, t) = cfg.spec_shape;
    let plane = f * t;
    let p = cfg.target_pairs.len();
    let n = records.len();
    let mut spec = vec![0.0f32; n * 4 * plane];
    let mut target = vec![0.0f32; n * 4 * p * plane];
    for (i, r) in records.iter().enumerate() {
        for ear in 0..2 {
            let reference = spectrogram(plan, &r.pair(Orientation::Deg0)[ear], r.sample_rate, cfg.input_gain)?;
            check_shape(&reference, cfg)?;
            write_complex(&mut spec[(i * 4 + 2 * ear) * plane..][..2 * plane], &reference, None);
            for (q, &alpha) in cfg.target_pairs.iter().enumerate() {
                let rotated = spectrogram(plan, &r.pair(alpha)[ear], r.sample_rate, cfg.input_gain)?;
                let c = i * 4 * p + 4 * q + 2 * ear;
                write_complex(&mut target[c * plane..][..2 * plane], &reference, Some(&rotated));
            }
        }
    }
    Ok((
        Tensor::new(&[n, 4, f, t], spec).unwrap(),
        Tensor::new(&[n, 4 * p, f, t], target).unwrap(),
    ))
}

/// Assembles every tensor the enabled tasks need for `records`.
pub fn make_batch(cfg: &ModelConfig, plan: &StftPlan, records: &[&SceneRecord]) -> Result<Batch, ModelError> {
    let n = records.len();
    if n == 0 {
        return Err(ModelError::DataMissing("empty batch".into()));
    }
    let (rows, cols) = cfg.output_grid;
    let mut labels = Vec::with_capacity(n * rows * cols);
    let mut depth = Vec::with_capacity(n * rows * cols);
    for r in records {
        if r.labels.shape() != (rows, cols) || r.depth.shape() != (rows, cols) {
            return Err(ModelError::Config(format!(
                "scene {} has a {:?} grid, model expects {rows}x{cols}",
                r.id,
                r.labels.shape()
            )));
        }
        labels.extend(r.labels.as_slice().iter().map(|&c| c as usize));
        depth.extend(r.depth.as_slice().iter().map(|&d| (d / cfg.far_depth) as f32));
    }
    let (s3r_spec, s3r_target) = if cfg.tasks.s3r {
        let (s, t) = s3r_tensors(cfg, plan, records)?;
        (Some(s), Some(t))
    } else {
        (None, None)
    };
    Ok(Batch {
        n,
        inputs: encoder_input(cfg, plan, records)?,
        labels,
        depth: Tensor::new(&[n, 1, rows, cols], depth).unwrap(),
        s3r_spec,
        s3r_target,
    })
}
