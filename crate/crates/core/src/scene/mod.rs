//! Physics-based binaural scene simulator.
//!
//! A [`Scene`] lists point sources around the rig. Rendering applies a
//! per-ear fractional delay (ITD), a first-order head-shadow gain (ILD), a
//! front/back spectral shading, `1/distance` attenuation, and an optional
//! diffuse noise bed. Ground-truth label and depth grids are painted from
//! the same source list, so every training target is exact.

mod render;
mod shard;
mod signal;
mod truth;

pub use render::{render_binaural, render_pair, render_rig, RigClip};
pub use shard::{
    generate_scene, scene_id, split_counts, split_ranges, write_dataset, ConfigHash, DatasetSummary, GeneratorConfig, Manifest,
    SceneRecord, Split,
};
pub use signal::synth_source_signal;
pub use truth::{blob_owners, ground_truth_depth, ground_truth_semantic, DepthGrid, LabelGrid};

use crate::dsp::DspError;
use crate::rig::Orientation;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum angular separation between two sources of one scene, degrees.
pub const MIN_SEPARATION_DEG: f64 = 15.0;
pub const MIN_DISTANCE: f64 = 2.0;
pub const MAX_DISTANCE: f64 = 50.0;
pub const MAX_SOURCES: usize = 4;
/// Depth assigned to cells without a source, meters.
pub const DEFAULT_FAR_DEPTH: f64 = 50.0;
/// Generated azimuths sit on this lattice so that quarter-turn rotations
/// are exact in floating point.
pub const AZIMUTH_STEP_DEG: f64 = 1.0 / 64.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("orientation {0} is not one of the rig's pair orientations")]
    BadOrientation(f64),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

/// Sound-making object classes. The discriminant is the compact training id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceClass {
    Car = 1,
    Motorcycle = 2,
    Train = 3,
}

impl SourceClass {
    pub const ALL: [SourceClass; 3] = [SourceClass::Car, SourceClass::Motorcycle, SourceClass::Train];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(SourceClass::Car),
            2 => Some(SourceClass::Motorcycle),
            3 => Some(SourceClass::Train),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceClass::Car => "car",
            SourceClass::Motorcycle => "motorcycle",
            SourceClass::Train => "train",
        }
    }

    /// Accepts the names external teachers use, including `tram`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "car" => Some(SourceClass::Car),
            "motorcycle" | "motorbike" => Some(SourceClass::Motorcycle),
            "train" | "tram" => Some(SourceClass::Train),
            _ => None,
        }
    }

    /// Angular width of the object seen from the 2 m reference distance.
    pub fn base_width_deg(self) -> f64 {
        match self {
            SourceClass::Car => 30.0,
            SourceClass::Motorcycle => 18.0,
            SourceClass::Train => 60.0,
        }
    }

    /// Height at 2 m as a fraction of the horizon band.
    pub fn base_height_fraction(self) -> f64 {
        match self {
            SourceClass::Car => 0.75,
            SourceClass::Motorcycle => 0.6,
            SourceClass::Train => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub class: SourceClass,
    /// Degrees in [0, 360), counter-clockwise from the rig front.
    pub azimuth: f64,
    /// Meters in [2, 50].
    pub distance: f64,
    pub seed: u64,
    pub gain: f64,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.azimuth.is_finite() && (0.0..360.0).contains(&self.azimuth)) {
            return Err(SceneError::InvalidScene(format!("azimuth {} outside [0, 360)", self.azimuth)));
        }
        if !(MIN_DISTANCE..=MAX_DISTANCE).contains(&self.distance) {
            return Err(SceneError::InvalidScene(format!(
                "distance {} outside [{MIN_DISTANCE}, {MAX_DISTANCE}]",
                self.distance
            )));
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(SceneError::InvalidScene(format!("gain {} must be positive", self.gain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub sources: Vec<SourceSpec>,
    pub ambient_level: f64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
}

/// Smallest absolute angle between two azimuths, degrees.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

impl Scene {
    pub fn new(sources: Vec<SourceSpec>, ambient_level: f64, duration: f64, seed: u64) -> Result<Self, SceneError> {
        let scene = Self {
            sources,
            ambient_level,
            duration,
            seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.sources.len() > MAX_SOURCES {
            return Err(SceneError::InvalidScene(format!(
                "{} sources (at most {MAX_SOURCES})",
                self.sources.len()
            )));
        }
        if !(self.ambient_level.is_finite() && self.ambient_level >= 0.0) {
            return Err(SceneError::InvalidScene(format!("ambient level {}", self.ambient_level)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(SceneError::InvalidScene(format!("duration {}", self.duration)));
        }
        for s in &self.sources {
            s.validate()?;
        }
        for (i, a) in self.sources.iter().enumerate() {
            for b in &self.sources[i + 1..] {
                if angular_distance(a.azimuth, b.azimuth) < MIN_SEPARATION_DEG {
                    return Err(SceneError::InvalidScene(format!(
                        "sources at {} and {} are closer than {MIN_SEPARATION_DEG} degrees",
                        a.azimuth, b.azimuth
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every source turned counter-clockwise by `delta`.
    pub fn rotated(&self, delta: Orientation) -> Scene {
        let d = delta.degrees() as f64;
        Scene {
            sources: self
                .sources
                .iter()
                .map(|s| SourceSpec {
                    azimuth: (s.azimuth + d).rem_euclid(360.0),
                    ..s.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn sample_count(&self, sample_rate: u32) -> usize {
        (self.duration * sample_rate as f64).round() as usize
    }
}
