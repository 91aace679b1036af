//! Seeded scene generation and the on-disk dataset layout:
//! `<root>/<split>/<scene_id>/{audio_pair{0,90,180,270}.wav, labels.pgm,
//! depth.f32, scene.json}` plus one `manifest.json` per split.

use super::{
    angular_distance, ground_truth_depth, ground_truth_semantic, render_rig, DepthGrid, LabelGrid, Scene, SceneError, SourceClass,
    SourceSpec, AZIMUTH_STEP_DEG, MAX_DISTANCE, MAX_SOURCES, MIN_DISTANCE, MIN_SEPARATION_DEG,
};
use crate::io::{read_f32_raster, read_pgm, read_wav, write_f32_raster, write_pgm, write_wav, IoError};
use crate::rig::{Orientation, RigConfig};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub scenes: usize,
    pub seed: u64,
    pub sample_rate: u32,
    /// Seconds per clip.
    pub duration: f64,
    pub min_sources: usize,
    pub max_sources: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub ambient_level: f64,
    /// Per-source gain is drawn from `[1 - gain_jitter, 1 + gain_jitter]`.
    pub gain_jitter: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub far_depth: f64,
    pub rig: RigConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            scenes: 100,
            seed: 0,
            sample_rate: 16_000,
            duration: 2.0,
            min_sources: 1,
            max_sources: 2,
            min_distance: MIN_DISTANCE,
            max_distance: 10.0,
            ambient_level: 0.002,
            gain_jitter: 0.0,
            grid_rows: 32,
            grid_cols: 64,
            far_depth: super::DEFAULT_FAR_DEPTH,
            rig: RigConfig::default(),
        }
    }
}

/// Hex SHA-256 of the canonical JSON of a generator config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigHash(pub String);

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidScene(m));
        if self.scenes == 0 {
            return bad("scenes must be positive".into());
        }
        if self.min_sources > self.max_sources || self.max_sources > MAX_SOURCES {
            return bad(format!("source count range {}..={}", self.min_sources, self.max_sources));
        }
        if !(MIN_DISTANCE <= self.min_distance && self.min_distance <= self.max_distance && self.max_distance <= MAX_DISTANCE) {
            return bad(format!("distance range {}..{}", self.min_distance, self.max_distance));
        }
        if self.far_depth <= self.max_distance {
            return bad(format!("far_depth {} must exceed max_distance", self.far_depth));
        }
        if self.grid_rows < 8 || self.grid_cols < 8 {
            return bad(format!("grid {}x{} smaller than 8x8", self.grid_rows, self.grid_cols));
        }
        if !(0.0..1.0).contains(&self.gain_jitter) {
            return bad(format!("gain_jitter {}", self.gain_jitter));
        }
        if self.sample_rate == 0 || !(self.duration > 0.0) || !(self.ambient_level >= 0.0) {
            return bad("sample_rate, duration and ambient_level must be positive".into());
        }
        Ok(())
    }

    pub fn hash(&self) -> ConfigHash {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        ConfigHash(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Train/val/test sizes: 10% each for val and test (rounded down), rest train.
pub fn split_counts(n: usize) -> [usize; 3] {
    let val = n / 10;
    let test = n / 10;
    [n - val - test, val, test]
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Scene `index` of a dataset. Depends only on `(cfg, index)`.
pub fn generate_scene(cfg: &GeneratorConfig, index: usize) -> Scene {
    let seed = cfg.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (index as u64).wrapping_mul(0x9E37_79B9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(cfg.min_sources..=cfg.max_sources);
    let lattice = (360.0 / AZIMUTH_STEP_DEG) as u32;
    let mut sources: Vec<SourceSpec> = Vec::with_capacity(count);
    while sources.len() < count {
        let azimuth = rng.random_range(0..lattice) as f64 * AZIMUTH_STEP_DEG;
        if sources.iter().any(|s| angular_distance(s.azimuth, azimuth) < MIN_SEPARATION_DEG) {
            continue;
        }
        let class = SourceClass::ALL[rng.random_range(0..SourceClass::ALL.len())];
        let distance = rng.random_range(cfg.min_distance..=cfg.max_distance);
        let gain = if cfg.gain_jitter > 0.0 {
            rng.random_range(1.0 - cfg.gain_jitter..=1.0 + cfg.gain_jitter)
        } else {
            1.0
        };
        sources.push(SourceSpec {
            class,
            azimuth,
            distance,
            seed: rng.random(),
            gain,
        });
    }
    Scene {
        sources,
        ambient_level: cfg.ambient_level,
        duration: cfg.duration,
        seed: rng.random(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub split: Split,
    pub scene_ids: Vec<String>,
    pub config_hash: ConfigHash,
    pub config: GeneratorConfig,
}

impl Manifest {
    pub fn path(root: &Path, split: Split) -> std::path::PathBuf {
        root.join(split.name()).join("manifest.json")
    }

    pub fn load(root: &Path, split: Split) -> Result<Manifest, IoError> {
        let path = Manifest::path(root, split);
        let text = fs::read_to_string(&path).map_err(|e| IoError::at(&path, e))?;
        serde_json::from_str(&text).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub root: String,
    pub config_hash: ConfigHash,
    pub counts: Vec<(Split, usize)>,
}

/// One scene in memory: four stereo pairs (rig order) as float32 plus
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub scene: Scene,
    pub sample_rate: u32,
    pub pairs: [[Vec<f32>; 2]; 4],
    pub labels: LabelGrid,
    pub depth: DepthGrid,
}

fn pair_file(o: Orientation) -> String {
    format!("audio_pair{}.wav", o.degrees())
}

impl SceneRecord {
    pub fn synthesize(cfg: &GeneratorConfig, index: usize) -> Result<SceneRecord, SceneError> {
        let scene = generate_scene(cfg, index);
        let clip = render_rig(&scene, &cfg.rig, cfg.sample_rate)?;
        let pairs = clip.pairs.map(|(l, r)| [l.to_f32(), r.to_f32()]);
        Ok(SceneRecord {
            id: scene_id(index),
            labels: ground_truth_semantic(&scene, cfg.grid_rows, cfg.grid_cols),
            depth: ground_truth_depth(&scene, cfg.grid_rows, cfg.grid_cols, cfg.far_depth),
            scene,
            sample_rate: cfg.sample_rate,
            pairs,
        })
    }

    pub fn pair(&self, o: Orientation) -> &[Vec<f32>; 2] {
        &self.pairs[o.index()]
    }

    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        fs::create_dir_all(dir).map_err(|e| IoError::at(dir, e))?;
        for o in Orientation::ALL {
            let [l, r] = self.pair(o);
            write_wav(&dir.join(pair_file(o)), self.sample_rate, &[l, r])?;
        }
        write_pgm(&dir.join("labels.pgm"), &self.labels)?;
        write_f32_raster(&dir.join("depth.f32"), &self.depth.map(|&d| d as f32))?;
        let path = dir.join("scene.json");
        let json = serde_json::to_string_pretty(&self.scene).expect("scene serializes");
        fs::write(&path, json).map_err(|e| IoError::at(&path, e))
    }

    pub fn load(dir: &Path, id: &str) -> Result<SceneRecord, IoError> {
        let path = dir.join("scene.json");
        let text = fs::read_to_string(&path).map_err(|e| IoError::at(&path, e))?;
        let scene: Scene = serde_json::from_str(&text).map_err(|e| IoError::Format(format!("{}: {e}", path.display())))?;
        let mut sample_rate = 0;
        let mut pairs: [[Vec<f32>; 2]; 4] = Default::default();
        for o in Orientation::ALL {
            let wav = read_wav(&dir.join(pair_file(o)))?;
            if wav.channels.len() != 2 {
                return Err(IoError::BadAudioFormat(format!(
                    "{}: expected 2 channels, found {}",
                    pair_file(o),
                    wav.channels.len()
                )));
            }
            sample_rate = wav.sample_rate;
            let mut ch = wav.channels.into_iter();
            pairs[o.index()] = [ch.next().unwrap(), ch.next().unwrap()];
        }
        let labels = read_pgm(&dir.join("labels.pgm"))?;
        let depth = read_f32_raster(&dir.join("depth.f32"), labels.rows(), labels.cols())?.map(|&d| d as f64);
        Ok(SceneRecord {
            id: id.to_string(),
            scene,
            sample_rate,
            pairs,
            labels,
            depth,
        })
    }
}

/// Index range of each split: train first, then val, then test.
pub fn split_ranges(n: usize) -> [(Split, std::ops::Range<usize>); 3] {
    let [tr, va, te] = split_counts(n);
    [
        (Split::Train, 0..tr),
        (Split::Val, tr..tr + va),
        (Split::Test, tr + va..tr + va + te),
    ]
}

/// Generates and writes the full dataset under `root`.
pub fn write_dataset(root: &Path, cfg: &GeneratorConfig) -> Result<DatasetSummary, SceneError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut counts = Vec::new();
    for (split, range) in split_ranges(cfg.scenes) {
        let split_dir = root.join(split.name());
        fs::create_dir_all(&split_dir).map_err(|e| IoError::at(&split_dir, e))?;
        let mut ids = Vec::with_capacity(range.len());
        for index in range {
            let record = SceneRecord::synthesize(cfg, index)?;
            record.write(&split_dir.join(&record.id))?;
            ids.push(record.id);
        }
        counts.push((split, ids.len()));
        let manifest = Manifest {
            split,
            scene_ids: ids,
            config_hash: hash.clone(),
            config: cfg.clone(),
        };
        let path = Manifest::path(root, split);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| IoError::at(&path, e))?;
    }
    Ok(DatasetSummary {
        root: root.display().to_string(),
        config_hash: hash,
        counts,
    })
}
