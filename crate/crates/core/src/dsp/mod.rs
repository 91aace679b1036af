//! Signal-processing kernels: level normalization, STFT/ISTFT, log
//! spectrograms, complex-mask algebra, analytic envelopes and the
//! difference-signal reconstruction used by spatial sound super-resolution.
//!
//! Every function here is pure and thread-safe.

mod cache;
mod envelope;
mod stft;

pub use cache::{read_spectrogram, write_spectrogram, SpectrogramHeader};
pub use envelope::envelope;
pub use stft::{hann_window, istft, stft, ComplexSpectrogram, StftPlan};

use crate::grid::Grid;
use crate::rig::{Ear, Orientation};
use num_complex::Complex64;
use thiserror::Error;

/// Clips whose RMS is at or below this level are treated as silent.
pub const SILENCE_FLOOR: f64 = 1e-8;

/// Target RMS applied to every audio channel before feature extraction.
pub const DEFAULT_TARGET_RMS: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("input is silent (rms {rms:e} <= {SILENCE_FLOOR:e})")]
    SilentInput { rms: f64 },
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Time-domain audio for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::BadConfig("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(DspError::NonFinite("waveform"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn from_f32(samples: &[f32], sample_rate: u32) -> Result<Self, DspError> {
        Self::new(samples.iter().map(|&s| s as f64).collect(), sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.samples.iter().map(|&s| s as f32).collect()
    }

    fn check_compatible(&self, other: &Waveform) -> Result<(), DspError> {
        if self.len() != other.len() || self.sample_rate != other.sample_rate {
            return Err(DspError::ShapeMismatch(format!(
                "{} samples @ {} Hz vs {} samples @ {} Hz",
                self.len(),
                self.sample_rate,
                other.len(),
                other.sample_rate
            )));
        }
        Ok(())
    }

    /// Sample-wise `self - other`.
    pub fn sub(&self, other: &Waveform) -> Result<Waveform, DspError> {
        self.check_compatible(other)?;
        Ok(Waveform {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect(),
            sample_rate: self.sample_rate,
        })
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Scales `w` so that its RMS equals `target_rms`.
pub fn rms_normalize(w: &Waveform, target_rms: f64) -> Result<Waveform, DspError> {
    if w.is_empty() {
        return Err(DspError::BadConfig("cannot normalize an empty waveform".into()));
    }
    if !(target_rms.is_finite() && target_rms > 0.0) {
        return Err(DspError::BadConfig(format!("target rms {target_rms}")));
    }
    let current = w.rms();
    if current <= SILENCE_FLOOR {
        return Err(DspError::SilentInput { rms: current });
    }
    let normalized = w.scaled(target_rms / current);
    // A second pass absorbs the rounding of the first ratio so that
    // normalizing an already-normalized clip is a fixed point.
    let residual = target_rms / normalized.rms();
    if residual != 1.0 {
        return Ok(normalized.scaled(residual));
    }
    Ok(normalized)
}

/// Element-wise `ln(1 + |s|)`.
pub fn log_magnitude(s: &ComplexSpectrogram) -> Grid<f64> {
    s.bins().map(|z| z.norm().ln_1p())
}

/// Complex ratio mask: real and imaginary parts, both bounded to [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMask {
    real: Grid<f64>,
    imag: Grid<f64>,
}

impl ComplexMask {
    pub fn new(real: Grid<f64>, imag: Grid<f64>) -> Result<Self, DspError> {
        if !real.same_shape(&imag) {
            return Err(DspError::ShapeMismatch(format!(
                "mask real {:?} vs imag {:?}",
                real.shape(),
                imag.shape()
            )));
        }
        let in_range = |v: &f64| v.is_finite() && (-1.0..=1.0).contains(v);
        if !real.as_slice().iter().all(in_range) || !imag.as_slice().iter().all(in_range) {
            return Err(DspError::BadConfig("mask entries must lie in [-1, 1]".into()));
        }
        Ok(Self { real, imag })
    }

    /// The mask `value` at every cell.
    pub fn constant(freq_bins: usize, frames: usize, value: Complex64) -> Result<Self, DspError> {
        Self::new(Grid::filled(freq_bins, frames, value.re), Grid::filled(freq_bins, frames, value.im))
    }

    pub fn real(&self) -> &Grid<f64> {
        &self.real
    }

    pub fn imag(&self) -> &Grid<f64> {
        &self.imag
    }

    pub fn shape(&self) -> (usize, usize) {
        self.real.shape()
    }
}

/// Cell-wise complex product `s · (m.real + i·m.imag)`.
pub fn apply_complex_mask(s: &ComplexSpectrogram, m: &ComplexMask) -> Result<ComplexSpectrogram, DspError> {
    if s.bins().shape() != m.shape() {
        return Err(DspError::ShapeMismatch(format!(
            "spectrogram {:?} vs mask {:?}",
            s.bins().shape(),
            m.shape()
        )));
    }
    let data = s
        .bins()
        .as_slice()
        .iter()
        .zip(m.real.as_slice().iter().zip(m.imag.as_slice()))
        .map(|(z, (&re, &im))| z * Complex64::new(re, im))
        .collect();
    Ok(s.with_bins(Grid::from_vec(s.freq_bins(), s.frames(), data).expect("shape preserved")))
}

/// Difference between the front pair and the pair at `alpha` for one ear.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSignal {
    pub wave: Waveform,
    pub alpha: Orientation,
    pub channel: Ear,
}

impl DifferenceSignal {
    /// `reference - target`, where `reference` is the front-pair channel.
    pub fn between(reference: &Waveform, target: &Waveform, alpha: Orientation, channel: Ear) -> Result<Self, DspError> {
        if alpha == Orientation::Deg0 {
            return Err(DspError::BadConfig(
                "difference signals are defined for 90, 180 and 270 degrees".into(),
            ));
        }
        Ok(Self {
            wave: reference.sub(target)?,
            alpha,
            channel,
        })
    }
}

/// Recovers the rotated channel from the reference and a predicted
/// difference spectrogram: `reference - istft(diff_spec)`.
pub fn reconstruct_target(reference: &Waveform, diff_spec: &ComplexSpectrogram) -> Result<Waveform, DspError> {
    let diff = istft(diff_spec)?;
    reference.sub(&diff)
}
