//! Model and experiment settings as flat `key = value` text.
//!
//! Each settings struct lists its keys through [`KeyValue::entries`]; the
//! same list drives parsing, serialization and the CLI help text, so the
//! three cannot drift apart.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use bapn_core::rig::Orientation;
use bapn_core::scene::{GeneratorConfig, DEFAULT_FAR_DEPTH};

use crate::ModelError;

/// One documented setting: key, current value rendered as text, help.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: &'static str,
    pub value: String,
    pub help: &'static str,
}

fn entry(key: &'static str, value: impl Display, help: &'static str) -> Entry {
    Entry {
        key,
        value: value.to_string(),
        help,
    }
}

pub trait KeyValue {
    fn entries(&self) -> Vec<Entry>;

    /// Applies one setting. `Ok(false)` means the key belongs elsewhere.
    fn set(&mut self, key: &str, value: &str) -> Result<bool, ModelError>;

    fn to_text(&self) -> String {
        let mut out = String::new();
        for e in self.entries() {
            out.push_str(&format!("# {}\n{} = {}\n", e.help, e.key, e.value));
        }
        out
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ModelError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses `key=value` as used by `--set`.
pub fn parse_override(s: &str) -> Result<(String, String), ModelError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ModelError::Config(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
    v.parse().map_err(|_| ModelError::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ModelError> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s.trim())).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn orientations(key: &str, v: &str) -> Result<Vec<Orientation>, ModelError> {
    let mut out = Vec::new();
    for d in list::<u32>(key, v)? {
        let o = Orientation::from_degrees(d).ok_or_else(|| ModelError::Config(format!("{key}: {d} is not 0, 90, 180 or 270")))?;
        if !out.contains(&o) {
            out.push(o);
        }
    }
    out.sort();
    Ok(out)
}

fn degrees(os: &[Orientation]) -> String {
    join(&os.iter().map(|o| o.degrees()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tasks {
    pub semantic: bool,
    pub depth: bool,
    pub s3r: bool,
}

impl Tasks {
    pub const ALL: Tasks = Tasks {
        semantic: true,
        depth: true,
        s3r: true,
    };

    pub const SEMANTIC: Tasks = Tasks {
        semantic: true,
        depth: false,
        s3r: false,
    };

    /// Short label: `B` for semantic alone, `B:D`, `B:S`, `B:SD` with extra tasks.
    pub fn label(&self) -> String {
        let mut extra = String::new();
        if self.s3r {
            extra.push('S');
        }
        if self.depth {
            extra.push('D');
        }
        let head = if self.semantic { "B" } else { "-" };
        if extra.is_empty() {
            head.to_string()
        } else {
            format!("{head}:{extra}")
        }
    }

    pub fn from_label(s: &str) -> Option<Tasks> {
        let (head, extra) = s.split_once(':').unwrap_or((s, ""));
        if head != "B" && head != "-" {
            return None;
        }
        if !extra.chars().all(|c| c == 'S' || c == 'D') {
            return None;
        }
        Some(Tasks {
            semantic: head == "B",
            depth: extra.contains('D'),
            s3r: extra.contains('S'),
        })
    }
}

impl Display for Tasks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = [(self.semantic, "semantic"), (self.depth, "depth"), (self.s3r, "s3r")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Tasks {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(t) = Tasks::from_label(s) {
            return Ok(t);
        }
        let mut t = Tasks {
            semantic: false,
            depth: false,
            s3r: false,
        };
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name {
                "semantic" => t.semantic = true,
                "depth" => t.depth = true,
                "s3r" => t.s3r = true,
                other => return Err(ModelError::Config(format!("tasks: unknown task {other:?}"))),
            }
        }
        if !(t.semantic || t.depth || t.s3r) {
            return Err(ModelError::Config("tasks: at least one task is required".into()));
        }
        Ok(t)
    }
}

/// Which microphones feed the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSelection {
    /// Left ear of the front pair, duplicated into both encoder branches.
    Mono,
    /// Both ears of each listed pair.
    Pairs(Vec<Orientation>),
}

impl InputSelection {
    /// `(pair, ear index)` per encoder branch, in branch order.
    pub fn branches(&self) -> Vec<(Orientation, usize)> {
        match self {
            InputSelection::Mono => vec![(Orientation::Deg0, 0), (Orientation::Deg0, 0)],
            InputSelection::Pairs(ps) => ps.iter().flat_map(|&o| [(o, 0), (o, 1)]).collect(),
        }
    }

    pub fn includes_front_pair(&self) -> bool {
        match self {
            InputSelection::Mono => false,
            InputSelection::Pairs(ps) => ps.contains(&Orientation::Deg0),
        }
    }
}

impl Display for InputSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputSelection::Mono => f.write_str("mono"),
            InputSelection::Pairs(ps) => f.write_str(&degrees(ps)),
        }
    }
}

impl FromStr for InputSelection {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "mono" {
            return Ok(InputSelection::Mono);
        }
        let ps = orientations("inputs", s)?;
        if ps.is_empty() {
            return Err(ModelError::Config("inputs: no pairs listed".into()));
        }
        Ok(InputSelection::Pairs(ps))
    }
}

/// Architecture and feature settings. Saved next to every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub aspp_filters: usize,
    pub aspp_dilations: [usize; 3],
    pub dilation_scale: f64,
    pub decoder_channels: usize,
    /// Azimuth harmonics in the decoder position channels.
    pub azimuth_harmonics: usize,
    /// Average the encoder features over time and frequency before the
    /// semantic and depth decoders upsample them.
    pub global_pool: bool,
    pub output_grid: (usize, usize),
    pub target_pairs: Vec<Orientation>,
    pub tasks: Tasks,
    pub inputs: InputSelection,
    pub window: usize,
    pub hop: usize,
    /// Spectrogram shape `(freq bins, frames)` the model is built for.
    pub spec_shape: (usize, usize),
    pub far_depth: f64,
    /// Waveform gain applied before the STFT; fixed from the training split.
    pub input_gain: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            aspp_filters: 64,
            aspp_dilations: [6, 12, 18],
            dilation_scale: 1.0,
            decoder_channels: 64,
            azimuth_harmonics: 4,
            global_pool: false,
            output_grid: (32, 64),
            target_pairs: Orientation::TARGETS.to_vec(),
            tasks: Tasks::ALL,
            inputs: InputSelection::Pairs(vec![Orientation::Deg0]),
            window: 512,
            hop: 160,
            spec_shape: (257, 201),
            far_depth: DEFAULT_FAR_DEPTH,
            input_gain: 1.0,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    /// Dilations after scaling, at least 1.
    pub fn effective_dilations(&self) -> [usize; 3] {
        self.aspp_dilations
            .map(|d| ((d as f64 * self.dilation_scale).round() as usize).max(1))
    }

    pub fn branches(&self) -> usize {
        self.inputs.branches().len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.base_channels == 0 || self.decoder_channels == 0 || self.azimuth_harmonics == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.aspp_filters < 8 {
            return bad(format!("aspp_filters {} below 8", self.aspp_filters));
        }
        if !(self.dilation_scale > 0.0) || self.aspp_dilations.contains(&0) {
            return bad("dilations and dilation_scale must be positive".into());
        }
        if self.output_grid.0 < 2 || self.output_grid.1 < 2 {
            return bad("output_grid must be at least 2x2".into());
        }
        if self.spec_shape.0 < 2 || self.spec_shape.1 < 2 {
            return bad("spec_shape must be at least 2x2".into());
        }
        if self.tasks.s3r && self.target_pairs.is_empty() {
            return bad("s3r needs at least one target pair".into());
        }
        if self.tasks.s3r && !self.inputs.includes_front_pair() {
            return bad("s3r predicts from the front pair, so inputs must include pair 0".into());
        }
        if self.target_pairs.contains(&Orientation::Deg0) {
            return bad("target_pairs may only hold 90, 180 and 270".into());
        }
        if !(self.far_depth > 0.0) || !(self.input_gain > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("far_depth, input_gain and bn_momentum out of range".into());
        }
        if self.window == 0 || self.hop == 0 || self.hop > self.window / 2 {
            return bad(format!("window {} / hop {} not admissible", self.window, self.hop));
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            if !cfg.set(&k, &v)? {
                return Err(ModelError::Config(format!("unknown model key {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl KeyValue for ModelConfig {
    fn entries(&self) -> Vec<Entry> {
        vec![
            entry(
                "base_channels",
                self.base_channels,
                "encoder width of the first strided layer; later layers use 2x, 4x, 8x",
            ),
            entry(
                "aspp_filters",
                self.aspp_filters,
                "filters per ASPP branch and after the fuse layer",
            ),
            entry(
                "aspp_dilations",
                join(&self.aspp_dilations),
                "dilations of the three 3x3 ASPP branches",
            ),
            entry(
                "dilation_scale",
                self.dilation_scale,
                "multiplier applied to aspp_dilations (rounded, at least 1)",
            ),
            entry(
                "decoder_channels",
                self.decoder_channels,
                "width of the semantic and depth 1x1 decoder layers",
            ),
            entry(
                "azimuth_harmonics",
                self.azimuth_harmonics,
                "cos/sin azimuth harmonics fed to the decoders",
            ),
            entry(
                "global_pool",
                self.global_pool,
                "pool encoder features over the whole clip before the grid decoders",
            ),
            entry(
                "output_grid",
                format!("{}x{}", self.output_grid.0, self.output_grid.1),
                "label grid rows x columns",
            ),
            entry("target_pairs", degrees(&self.target_pairs), "pairs predicted by S3R, degrees"),
            entry("tasks", self.tasks, "enabled tasks: semantic, depth, s3r"),
            entry(
                "inputs",
                &self.inputs,
                "encoder inputs: mono, or pair degrees such as 0 or 0,90,180,270",
            ),
            entry("window", self.window, "STFT window length"),
            entry("hop", self.hop, "STFT hop"),
            entry(
                "spec_shape",
                format!("{}x{}", self.spec_shape.0, self.spec_shape.1),
                "spectrogram bins x frames (set from the data)",
            ),
            entry("far_depth", self.far_depth, "depth of empty cells, meters"),
            entry(
                "input_gain",
                self.input_gain,
                "waveform gain before the STFT (set from the training split)",
            ),
            entry("bn_momentum", self.bn_momentum, "batch norm running-statistics momentum"),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool, ModelError> {
        let pair = |v: &str| -> Result<(usize, usize), ModelError> {
            let (a, b) = v
                .split_once('x')
                .ok_or_else(|| ModelError::Config(format!("{key}: expected RxC, got {v:?}")))?;
            Ok((num(key, a.trim())?, num(key, b.trim())?))
        };
        match key {
            "base_channels" => self.base_channels = num(key, v)?,
            "aspp_filters" => self.aspp_filters = num(key, v)?,
            "aspp_dilations" => {
                let d: Vec<usize> = list(key, v)?;
                self.aspp_dilations = d.try_into().map_err(|_| ModelError::Config(format!("{key}: need three values")))?;
            }
            "dilation_scale" => self.dilation_scale = num(key, v)?,
            "decoder_channels" => self.decoder_channels = num(key, v)?,
            "azimuth_harmonics" => self.azimuth_harmonics = num(key, v)?,
            "global_pool" => self.global_pool = num(key, v)?,
            "output_grid" => self.output_grid = pair(v)?,
            "target_pairs" => self.target_pairs = orientations(key, v)?,
            "tasks" => self.tasks = v.parse()?,
            "inputs" => self.inputs = v.parse()?,
            "window" => self.window = num(key, v)?,
            "hop" => self.hop = num(key, v)?,
            "spec_shape" => self.spec_shape = pair(v)?,
            "far_depth" => self.far_depth = num(key, v)?,
            "input_gain" => self.input_gain = num(key, v)?,
            "bn_momentum" => self.bn_momentum = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.2,
            lambda2: 0.2,
        }
    }
}

/// Optimization settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weights: LossWeights,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Upweights target classes in the semantic loss by this factor.
    pub foreground_weight: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 10,
            lr: 1e-5,
            batch: 2,
            weights: LossWeights::default(),
            patience: 3,
            foreground_weight: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch == 0 || self.epochs == 0 {
            return Err(ModelError::Config("batch and epochs must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.weights.lambda1 >= 0.0) || !(self.weights.lambda2 >= 0.0) {
            return Err(ModelError::Config("lr and loss weights must be nonnegative".into()));
        }
        if !(self.foreground_weight > 0.0) {
            return Err(ModelError::Config("foreground_weight must be positive".into()));
        }
        Ok(())
    }
}

impl KeyValue for ExperimentConfig {
    fn entries(&self) -> Vec<Entry> {
        vec![
            entry("seed", self.seed, "training seed (initialization and batch order)"),
            entry("epochs", self.epochs, "maximum training epochs"),
            entry("lr", self.lr, "Adam learning rate"),
            entry("batch", self.batch, "scenes per optimization step"),
            entry("lambda1", self.weights.lambda1, "depth loss weight"),
            entry("lambda2", self.weights.lambda2, "S3R loss weight"),
            entry(
                "patience",
                self.patience,
                "early stop after this many epochs without validation improvement",
            ),
            entry(
                "foreground_weight",
                self.foreground_weight,
                "semantic loss weight of target classes relative to background",
            ),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool, ModelError> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "batch" => self.batch = num(key, v)?,
            "lambda1" => self.weights.lambda1 = num(key, v)?,
            "lambda2" => self.weights.lambda2 = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "foreground_weight" => self.foreground_weight = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Data generation keys. Grid size and far depth come from the model
/// settings so labels always match the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig(pub GeneratorConfig);

impl Default for DataConfig {
    fn default() -> Self {
        Self(GeneratorConfig::default())
    }
}

impl KeyValue for DataConfig {
    fn entries(&self) -> Vec<Entry> {
        let g = &self.0;
        vec![
            entry("scenes", g.scenes, "scenes to generate (80/10/10 train/val/test)"),
            entry("data_seed", g.seed, "dataset seed"),
            entry("sample_rate", g.sample_rate, "Hz"),
            entry("duration", g.duration, "seconds per clip"),
            entry("min_sources", g.min_sources, "fewest sources per scene"),
            entry("max_sources", g.max_sources, "most sources per scene"),
            entry("min_distance", g.min_distance, "nearest source distance, meters"),
            entry("max_distance", g.max_distance, "farthest source distance, meters"),
            entry("ambient_level", g.ambient_level, "ambient noise standard deviation"),
            entry("gain_jitter", g.gain_jitter, "per-source gain drawn from 1 +/- this"),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool, ModelError> {
        let g = &mut self.0;
        match key {
            "scenes" => g.scenes = num(key, v)?,
            "data_seed" => g.seed = num(key, v)?,
            "sample_rate" => g.sample_rate = num(key, v)?,
            "duration" => g.duration = num(key, v)?,
            "min_sources" => g.min_sources = num(key, v)?,
            "max_sources" => g.max_sources = num(key, v)?,
            "min_distance" => g.min_distance = num(key, v)?,
            "max_distance" => g.max_distance = num(key, v)?,
            "ambient_level" => g.ambient_level = num(key, v)?,
            "gain_jitter" => g.gain_jitter = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Every setting the command line accepts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub experiment: ExperimentConfig,
}

impl Settings {
    /// Generator config with the grid and far depth taken from the model.
    pub fn generator(&self) -> GeneratorConfig {
        let mut g = self.data.0.clone();
        g.grid_rows = self.model.output_grid.0;
        g.grid_cols = self.model.output_grid.1;
        g.far_depth = self.model.far_depth;
        g
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<(), ModelError> {
        for (k, v) in pairs {
            if !self.set(k, v)? {
                return Err(ModelError::Config(format!("unknown key {k:?}")));
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut s = Self::default();
        s.apply(&parse_kv(text)?)?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.model.validate()?;
        self.experiment.validate()?;
        self.generator().validate().map_err(|e| ModelError::Config(e.to_string()))
    }

    /// Aligned `key  default  help` listing.
    pub fn help_table() -> String {
        let entries = Settings::default().entries();
        let kw = entries.iter().map(|e| e.key.len()).max().unwrap_or(0);
        let vw = entries.iter().map(|e| e.value.len()).max().unwrap_or(0);
        entries
            .iter()
            .map(|e| format!("  {:kw$}  {:vw$}  {}\n", e.key, e.value, e.help))
            .collect()
    }
}

impl KeyValue for Settings {
    fn entries(&self) -> Vec<Entry> {
        let mut v = self.data.entries();
        v.extend(self.model.entries());
        v.extend(self.experiment.entries());
        v
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool, ModelError> {
        Ok(self.data.set(key, value)? || self.model.set(key, value)? || self.experiment.set(key, value)?)
    }
}

/// Lookup of the current values by key.
pub fn as_map(kv: &impl KeyValue) -> BTreeMap<&'static str, String> {
    kv.entries().into_iter().map(|e| (e.key, e.value)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_config_round_trips_through_text() {
        let mut cfg = ModelConfig {
            base_channels: 8,
            dilation_scale: 0.25,
            target_pairs: vec![Orientation::Deg90],
            tasks: Tasks::from_label("B:S").unwrap(),
            inputs: InputSelection::Pairs(vec![Orientation::Deg0, Orientation::Deg180]),
            ..ModelConfig::default()
        };
        cfg.input_gain = 3.25;
        let back = ModelConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_settings_key_is_settable_and_unique() {
        let mut s = Settings::default();
        let entries = s.entries();
        let mut keys: Vec<&str> = entries.iter().map(|e| e.key).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), entries.len());
        for e in entries {
            assert!(s.set(e.key, &e.value).unwrap(), "{}", e.key);
        }
        assert_eq!(s, Settings::default());
        assert!(Settings::help_table().lines().count() == keys.len());
    }

    #[test]
    fn parse_rejects_unknown_and_malformed() {
        assert!(Settings::from_text("nope = 1").is_err());
        assert!(Settings::from_text("lr 0.1").is_err());
        assert!(Settings::from_text("lr = fast").is_err());
        let s = Settings::from_text("# comment\nlr = 0.01 # trailing\n\ninputs = mono\n").unwrap();
        assert_eq!(s.experiment.lr, 0.01);
        assert_eq!(s.model.inputs, InputSelection::Mono);
    }

    #[test]
    fn task_labels() {
        for label in ["B", "B:D", "B:S", "B:SD"] {
            assert_eq!(Tasks::from_label(label).unwrap().label(), label);
        }
        assert_eq!("semantic,depth".parse::<Tasks>().unwrap().label(), "B:D");
        assert_eq!(Tasks::ALL.to_string(), "semantic,depth,s3r");
        assert!("".parse::<Tasks>().is_err());
    }

    #[test]
    fn dilations_scale_and_clamp() {
        let cfg = ModelConfig {
            dilation_scale: 0.05,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.effective_dilations(), [1, 1, 1]);
        assert_eq!(ModelConfig::default().effective_dilations(), [6, 12, 18]);
    }

    #[test]
    fn s3r_requires_front_pair_input() {
        let cfg = ModelConfig {
            inputs: InputSelection::Mono,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let ok = ModelConfig {
            inputs: InputSelection::Mono,
            tasks: Tasks::SEMANTIC,
            ..ModelConfig::default()
        };
        ok.validate().unwrap();
    }
}
