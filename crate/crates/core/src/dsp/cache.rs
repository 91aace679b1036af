//! Spectrogram cache: raw little-endian f32 (real, imag) pairs, row-major
//! `[freq][frame]`, next to a JSON header with the framing parameters.

use super::ComplexSpectrogram;
use crate::grid::Grid;
use crate::io::IoError;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramHeader {
    pub freq_bins: usize,
    pub frames: usize,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Length of the source waveform; older caches omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_len: Option<usize>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes `path` (binary payload) and `path.json` (header).
pub fn write_spectrogram(path: &Path, s: &ComplexSpectrogram) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(s.bins().as_slice().len() * 8);
    for z in s.bins().as_slice() {
        bytes.extend_from_slice(&(z.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| IoError::at(path, e))?;
    let header = SpectrogramHeader {
        freq_bins: s.freq_bins(),
        frames: s.frames(),
        window: s.window(),
        hop: s.hop(),
        sample_rate: s.sample_rate(),
        signal_len: Some(s.signal_len()),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    let side = sidecar(path);
    fs::write(&side, json).map_err(|e| IoError::at(&side, e))
}

pub fn read_spectrogram(path: &Path) -> Result<ComplexSpectrogram, IoError> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| IoError::at(&side, e))?;
    let header: SpectrogramHeader = serde_json::from_str(&text).map_err(|e| IoError::Format(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(path).map_err(|e| IoError::at(path, e))?;
    let cells = header.freq_bins * header.frames;
    if bytes.len() != cells * 8 {
        return Err(IoError::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            cells * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let grid = Grid::from_vec(header.freq_bins, header.frames, data).expect("length checked");
    let signal_len = header.signal_len.unwrap_or((header.frames - 1) * header.hop);
    ComplexSpectrogram::from_parts(grid, header.window, header.hop, header.sample_rate, signal_len)
        .map_err(|e| IoError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{stft, Waveform};

    #[test]
    fn cache_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new((0..3000).map(|t| ((t * 7) % 13) as f64 / 13.0 - 0.5).collect(), 16_000).unwrap();
        let s = stft(&w, 256, 64).unwrap();
        let path = dir.path().join("spec.f32");
        write_spectrogram(&path, &s).unwrap();
        let back = read_spectrogram(&path).unwrap();
        assert_eq!(back.bins().shape(), s.bins().shape());
        assert_eq!(back.signal_len(), 3000);
        for (a, b) in s.bins().as_slice().iter().zip(back.bins().as_slice()) {
            assert_eq!(a.re as f32, b.re as f32);
            assert_eq!(a.im as f32, b.im as f32);
        }
        let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar(&path)).unwrap()).unwrap();
        for key in ["freq_bins", "frames", "window", "hop", "sample_rate"] {
            assert!(header.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = stft(&Waveform::zeros(1000, 8000), 64, 16).unwrap();
        let path = dir.path().join("spec.f32");
        write_spectrogram(&path, &s).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_spectrogram(&path), Err(IoError::Format(_))));
    }
}
