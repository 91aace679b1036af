use super::{DspError, Waveform};
use crate::grid::Grid;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided complex spectrogram, `window/2 + 1` frequency rows by frame
/// columns. Frames are centered: frame `m` is centered on sample `m·hop` of
/// the zero-padded signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: Grid<Complex64>,
    window: usize,
    hop: usize,
    sample_rate: u32,
    signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn from_parts(bins: Grid<Complex64>, window: usize, hop: usize, sample_rate: u32, signal_len: usize) -> Result<Self, DspError> {
        check_config(window, hop)?;
        if sample_rate == 0 {
            return Err(DspError::BadConfig("sample rate must be positive".into()));
        }
        if bins.rows() != window / 2 + 1 {
            return Err(DspError::ShapeMismatch(format!(
                "{} frequency rows for window {window}",
                bins.rows()
            )));
        }
        if bins.cols() == 0 {
            return Err(DspError::ShapeMismatch("spectrogram has no frames".into()));
        }
        if bins.as_slice().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(DspError::NonFinite("spectrogram"));
        }
        Ok(Self {
            bins,
            window,
            hop,
            sample_rate,
            signal_len,
        })
    }

    pub fn bins(&self) -> &Grid<Complex64> {
        &self.bins
    }

    pub fn freq_bins(&self) -> usize {
        self.bins.rows()
    }

    pub fn frames(&self) -> usize {
        self.bins.cols()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Length of the waveform this spectrogram was computed from.
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    /// Same framing, different cell values.
    pub fn with_bins(&self, bins: Grid<Complex64>) -> Self {
        assert_eq!(bins.shape(), self.bins.shape(), "with_bins changes shape");
        Self { bins, ..self.clone() }
    }
}

fn check_config(window: usize, hop: usize) -> Result<(), DspError> {
    if window < 2 || window % 2 != 0 {
        return Err(DspError::BadConfig(format!("window {window} must be even and >= 2")));
    }
    if hop == 0 || hop > window {
        return Err(DspError::BadConfig(format!("hop {hop} must satisfy 0 < hop <= window ({window})")));
    }
    Ok(())
}

/// Frame count under center padding.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop + 1
}

/// Reusable FFT plan and analysis window for one (window, hop) pair.
#[derive(Clone)]
pub struct StftPlan {
    window: usize,
    hop: usize,
    taper: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("window", &self.window)
            .field("hop", &self.hop)
            .finish()
    }
}

impl StftPlan {
    pub fn new(window: usize, hop: usize) -> Result<Self, DspError> {
        check_config(window, hop)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window,
            hop,
            taper: hann_window(window),
            forward: planner.plan_fft_forward(window),
            inverse: planner.plan_fft_inverse(window),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn freq_bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn frames_for(&self, len: usize) -> usize {
        frame_count(len, self.hop)
    }

    pub fn forward(&self, w: &Waveform) -> Result<ComplexSpectrogram, DspError> {
        if w.is_empty() {
            return Err(DspError::BadConfig("cannot transform an empty waveform".into()));
        }
        let n = self.window;
        let half = n / 2;
        let x = w.samples();
        let frames = frame_count(x.len(), self.hop);
        let bins_per_frame = half + 1;
        let mut data = vec![Complex64::new(0.0, 0.0); bins_per_frame * frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for m in 0..frames {
            // Frame m covers padded samples [m·hop, m·hop + n); padded index
            // p maps to signal index p - half.
            let start = (m * self.hop) as isize - half as isize;
            for (i, slot) in buf.iter_mut().enumerate() {
                let t = start + i as isize;
                let v = if t >= 0 && (t as usize) < x.len() {
                    x[t as usize] * self.taper[i]
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins_per_frame {
                data[k * frames + m] = buf[k];
            }
        }
        let bins = Grid::from_vec(bins_per_frame, frames, data).expect("shape");
        Ok(ComplexSpectrogram {
            bins,
            window: n,
            hop: self.hop,
            sample_rate: w.sample_rate(),
            signal_len: x.len(),
        })
    }

    /// Weighted overlap-add inverse with `1 / Σ w²` normalization.
    pub fn inverse(&self, s: &ComplexSpectrogram) -> Result<Waveform, DspError> {
        if s.window != self.window || s.hop != self.hop {
            return Err(DspError::BadConfig(format!(
                "plan is {}/{}, spectrogram is {}/{}",
                self.window, self.hop, s.window, s.hop
            )));
        }
        if self.hop > self.window / 2 {
            return Err(DspError::BadConfig(format!(
                "hop {} exceeds window/2 = {}; Hann overlap-add cannot reconstruct",
                self.hop,
                self.window / 2
            )));
        }
        let n = self.window;
        let half = n / 2;
        let frames = s.frames();
        let padded_len = (frames - 1) * self.hop + n;
        let mut acc = vec![0.0; padded_len];
        let mut wsum = vec![0.0; padded_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let scale = 1.0 / n as f64;
        for m in 0..frames {
            for k in 0..=half {
                buf[k] = s.bins.at(k, m);
            }
            // Hermitian completion; DC and Nyquist imaginary parts drop out
            // when the real part is taken.
            for k in 1..half {
                buf[n - k] = buf[k].conj();
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let offset = m * self.hop;
            for i in 0..n {
                let w = self.taper[i];
                acc[offset + i] += w * buf[i].re * scale;
                wsum[offset + i] += w * w;
            }
        }
        let samples = (0..s.signal_len)
            .map(|t| {
                let p = t + half;
                if p < padded_len && wsum[p] > 1e-10 {
                    acc[p] / wsum[p]
                } else {
                    0.0
                }
            })
            .collect();
        Waveform::new(samples, s.sample_rate)
    }
}

/// Centered Hann STFT. `freq_bins = window/2 + 1`, `frames = len/hop + 1`.
pub fn stft(w: &Waveform, window: usize, hop: usize) -> Result<ComplexSpectrogram, DspError> {
    StftPlan::new(window, hop)?.forward(w)
}

/// Inverse of [`stft`]; requires `hop <= window/2`.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform, DspError> {
    StftPlan::new(s.window, s.hop)?.inverse(s)
}
