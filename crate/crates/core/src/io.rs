//! File formats: 32-bit float WAV, binary PGM (P5) and raw little-endian
//! f32 rasters.

use crate::grid::Grid;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad audio format: {0}")]
    BadAudioFormat(String),
    #[error("malformed file: {0}")]
    Format(String),
}

impl IoError {
    pub fn at(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Decoded WAV contents, one vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f32>>,
}

/// Writes interleaved 32-bit IEEE float PCM. All channels must share a length.
pub fn write_wav(path: &Path, sample_rate: u32, channels: &[&[f32]]) -> Result<(), IoError> {
    let bytes = encode_wav(sample_rate, channels)?;
    fs::write(path, bytes).map_err(|e| IoError::at(path, e))
}

pub fn encode_wav(sample_rate: u32, channels: &[&[f32]]) -> Result<Vec<u8>, IoError> {
    let n_ch = channels.len();
    if n_ch == 0 || n_ch > u16::MAX as usize {
        return Err(IoError::BadAudioFormat(format!("{n_ch} channels")));
    }
    let frames = channels[0].len();
    if channels.iter().any(|c| c.len() != frames) {
        return Err(IoError::BadAudioFormat("channels differ in length".into()));
    }
    let data_len = frames * n_ch * 4;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_IEEE_FLOAT.to_le_bytes());
    out.extend_from_slice(&(n_ch as u16).to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * n_ch as u32 * 4).to_le_bytes());
    out.extend_from_slice(&((n_ch * 4) as u16).to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..frames {
        for ch in channels {
            out.extend_from_slice(&ch[i].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_wav(path: &Path) -> Result<WavData, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::at(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        IoError::BadAudioFormat(m) => IoError::BadAudioFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_wav(bytes: &[u8]) -> Result<WavData, IoError> {
    let bad = |m: &str| IoError::BadAudioFormat(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated chunk"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let mut tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(bad("short extensible fmt chunk"));
                    }
                    tag = u16::from_le_bytes([body[24], body[25]]);
                }
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, n_ch, rate, bits) = format.ok_or_else(|| bad("data before fmt"))?;
                if tag != WAVE_FORMAT_IEEE_FLOAT || bits != 32 {
                    return Err(bad(&format!("only 32-bit IEEE float PCM is supported (format {tag}, {bits} bits)")));
                }
                if n_ch == 0 || rate == 0 {
                    return Err(bad("zero channels or sample rate"));
                }
                let n_ch = n_ch as usize;
                let frame_bytes = 4 * n_ch;
                if body.len() % frame_bytes != 0 {
                    return Err(bad("data length is not a whole number of frames"));
                }
                let frames = body.len() / frame_bytes;
                let mut channels = vec![Vec::with_capacity(frames); n_ch];
                for frame in body.chunks_exact(frame_bytes) {
                    for (c, s) in frame.chunks_exact(4).enumerate() {
                        channels[c].push(f32::from_le_bytes(s.try_into().unwrap()));
                    }
                }
                return Ok(WavData {
                    sample_rate: rate,
                    channels,
                });
            }
            _ => {}
        }
        // Chunks are padded to even length.
        pos = body_end + (size & 1);
    }
    Err(bad("no data chunk"))
}

/// Writes an 8-bit binary PGM.
pub fn write_pgm(path: &Path, grid: &Grid<u8>) -> Result<(), IoError> {
    let mut out = format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
    out.extend_from_slice(grid.as_slice());
    fs::write(path, out).map_err(|e| IoError::at(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Grid<u8>, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::at(path, e))?;
    decode_pgm(&bytes).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))
}

fn decode_pgm(bytes: &[u8]) -> Result<Grid<u8>, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("magic {} is not P5", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s}"));
    let (cols, rows, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} unsupported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = rows * cols;
    if bytes.len() < pos + need {
        return Err("truncated raster".into());
    }
    Ok(Grid::from_vec(rows, cols, bytes[pos..pos + need].to_vec()).expect("sized"))
}

pub fn write_f32_raster(path: &Path, grid: &Grid<f32>) -> Result<(), IoError> {
    let bytes: Vec<u8> = grid.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| IoError::at(path, e))
}

pub fn read_f32_raster(path: &Path, rows: usize, cols: usize) -> Result<Grid<f32>, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::at(path, e))?;
    if bytes.len() != rows * cols * 4 {
        return Err(IoError::Format(format!(
            "{}: expected {} bytes for {rows}x{cols}, found {}",
            path.display(),
            rows * cols * 4,
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Grid::from_vec(rows, cols, data).expect("sized"))
}
