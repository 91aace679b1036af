//! The multi-task network: a shared strided encoder applied to every input
//! ear with one weight set, an ASPP block, and three task decoders.

use std::collections::BTreeMap;
use std::path::Path;

use bapn_autodiff::{AdError, BnMode, BnStats, ConvGeometry, ParamStore, Real, Tape, Tensor, Var};
use bapn_core::io::IoError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{KeyValue, ModelConfig};
use crate::ModelError;

pub const CLASSES: usize = 4;
const ENCODER_LAYERS: usize = 4;
const BN_EPS: f64 = 1e-5;
/// Depth head bias at initialization: every cell starts at the far depth.
const DEPTH_BIAS_INIT: f32 = 1.0;

/// Tape handles of one forward pass. Depth is divided by the far depth.
#[derive(Debug, Clone, Copy)]
pub struct OutputVars {
    pub semantic_logits: Option<Var>,
    pub depth_norm: Option<Var>,
    pub s3r_masks: Option<Var>,
}

/// Plain tensors of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Class probabilities `[n, 4, rows, cols]`.
    pub semantic: Option<Tensor<f32>>,
    /// Meters `[n, 1, rows, cols]`.
    pub depth: Option<Tensor<f32>>,
    /// `[n, 4·pairs, freq bins, frames]` in `[-1, 1]`.
    pub s3r_masks: Option<Tensor<f32>>,
}

/// Batch statistics gathered in train mode, keyed by layer name.
pub type BnRecord<T> = Vec<(String, BnStats<T>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

fn encoder_widths(cfg: &ModelConfig) -> [usize; ENCODER_LAYERS] {
    [1, 2, 4, 8].map(|m| cfg.base_channels * m)
}

fn s3r_widths(cfg: &ModelConfig) -> [usize; 5] {
    let a = cfg.aspp_filters;
    [a / 2, a / 4, a / 8, a / 8, a / 8].map(|c| c.max(4))
}

/// Spatial size after the four stride-2 SAME layers.
pub fn encoded_shape(h: usize, w: usize) -> (usize, usize) {
    let mut hw = (h, w);
    for _ in 0..ENCODER_LAYERS {
        hw = (hw.0.div_ceil(2), hw.1.div_ceil(2));
    }
    hw
}

/// Number of decoder position channels for `harmonics` azimuth harmonics.
pub fn coord_channels(harmonics: usize) -> usize {
    2 * harmonics + 1
}

/// Fixed decoder position channels `[2K+1, rows, cols]`: `cos kφ`, `sin kφ`
/// for the cell's azimuth φ (k = 1..K), then elevation in `[-1, 1]`.
pub fn coordinate_channels(rows: usize, cols: usize, harmonics: usize) -> Vec<f32> {
    let channels = coord_channels(harmonics);
    let mut out = vec![0.0f32; channels * rows * cols];
    for r in 0..rows {
        let elev = (r as f64 + 0.5) / rows as f64 * 2.0 - 1.0;
        for c in 0..cols {
            let phi = (c as f64 + 0.5) / cols as f64 * std::f64::consts::TAU;
            for k in 0..harmonics {
                let a = (k + 1) as f64 * phi;
                out[((2 * k) * rows + r) * cols + c] = a.cos() as f32;
                out[((2 * k + 1) * rows + r) * cols + c] = a.sin() as f32;
            }
            out[((channels - 1) * rows + r) * cols + c] = elev as f32;
        }
    }
    out
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn he(&mut self, name: &str, shape: [usize; 4], fan_in: usize) -> Result<(), ModelError> {
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                (z * std) as f32
            })
            .collect();
        self.store.add(name, Tensor::new(&shape, data).unwrap())?;
        Ok(())
    }

    fn filled(&mut self, name: &str, shape: &[usize], v: f32) -> Result<(), ModelError> {
        self.store.add(name, Tensor::filled(shape, v))?;
        Ok(())
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<(), ModelError> {
        self.filled(&format!("{name}.gamma"), &[c], 1.0)?;
        self.filled(&format!("{name}.beta"), &[c], 0.0)?;
        self.store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]))?;
        self.store.add_buffer(&format!("{name}.running_var"), Tensor::filled(&[c], 1.0))?;
        Ok(())
    }

    fn conv_bn(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> Result<(), ModelError> {
        self.he(&format!("{name}.w"), [cout, cin, k, k], cin * k * k)?;
        self.bn(&format!("{name}.bn"), cout)
    }

    fn up_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<(), ModelError> {
        self.he(&format!("{name}.w"), [cin, cout, k, k], (cin * k * k / (stride * stride)).max(1))?;
        self.bn(&format!("{name}.bn"), cout)
    }

    fn head(&mut self, name: &str, cout: usize, cin: usize, bias: f32) -> Result<(), ModelError> {
        self.filled(&format!("{name}.w"), &[cout, cin, 1, 1], 0.0)?;
        self.filled(&format!("{name}.b"), &[cout], bias)
    }
}

/// Per-forward state: the tape, the mode, and parameter leaves created so far.
struct Ctx<'a, T: Real> {
    tape: &'a mut Tape<T>,
    store: &'a ParamStore,
    mode: BnMode,
    vars: BTreeMap<String, Var>,
    stats: BnRecord<T>,
}

impl<T: Real> Ctx<'_, T> {
    fn p(&mut self, name: &str) -> Result<Var, ModelError> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let id = self
            .store
            .id(name)
            .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))?;
        let v = self.tape.param(id, self.store.tensor(id).cast())?;
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn bn(&mut self, name: &str, x: Var) -> Result<Var, ModelError> {
        let gamma = self.p(&format!("{name}.gamma"))?;
        let beta = self.p(&format!("{name}.beta"))?;
        let eps = T::from_f64(BN_EPS);
        let (y, stats) = match self.mode {
            BnMode::Train => self.tape.batchnorm(x, gamma, beta, BnMode::Train, None, eps)?,
            BnMode::Eval => {
                let buf = |s: &str| -> Result<Vec<T>, ModelError> {
                    let t = self
                        .store
                        .buffer(&format!("{name}.{s}"))
                        .ok_or_else(|| ModelError::Config(format!("missing buffer {name}.{s}")))?;
                    Ok(t.cast::<T>().into_data())
                };
                let (rm, rv) = (buf("running_mean")?, buf("running_var")?);
                self.tape.batchnorm(x, gamma, beta, BnMode::Eval, Some((&rm, &rv)), eps)?
            }
        };
        if self.mode == BnMode::Train {
            self.stats.push((name.to_string(), stats));
        }
        Ok(y)
    }

    fn conv_bn_relu(&mut self, name: &str, x: Var, g: impl Fn(usize, usize, usize) -> ConvGeometry) -> Result<Var, ModelError> {
        let w = self.p(&format!("{name}.w"))?;
        let [_, _, h, wd] = self.tape.value(x).dims4().unwrap();
        let k = self.tape.shape(w)[2];
        let y = self.tape.conv2d(x, w, g(h, wd, k))?;
        let y = self.bn(&format!("{name}.bn"), y)?;
        Ok(self.tape.relu(y)?)
    }

    /// Transposed conv, cropping `crop` cells from each border, then BN and ReLU.
    fn up_bn_relu(&mut self, name: &str, x: Var, stride: usize, crop: usize) -> Result<Var, ModelError> {
        let w = self.p(&format!("{name}.w"))?;
        let y = self.tape.conv_transpose2d(x, w, stride)?;
        let [_, _, h, wd] = self.tape.value(y).dims4().unwrap();
        let y = self.tape.crop(y, crop, crop, h - 2 * crop, wd - 2 * crop)?;
        let y = self.bn(&format!("{name}.bn"), y)?;
        Ok(self.tape.relu(y)?)
    }

    fn head(&mut self, name: &str, x: Var) -> Result<Var, ModelError> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        let y = self.tape.conv2d(x, w, ConvGeometry::new(1, 1, 0))?;
        Ok(self.tape.bias_add(y, b)?)
    }
}

fn pointwise(_: usize, _: usize, _: usize) -> ConvGeometry {
    ConvGeometry::new(1, 1, 0)
}

impl Model {
    /// Fresh model with seeded He initialization. Task heads start at zero
    /// weights: uniform class probabilities, far depth everywhere, and
    /// zero masks (the copy-reference prediction).
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let widths = encoder_widths(&cfg);
        let mut cin = 1;
        for (i, &c) in widths.iter().enumerate() {
            init.conv_bn(&format!("enc{i}"), c, cin, 4)?;
            cin = c;
        }
        let folded = cin * cfg.branches();
        let a = cfg.aspp_filters;
        init.conv_bn("aspp.b0", a, folded, 1)?;
        for i in 1..=3 {
            init.conv_bn(&format!("aspp.b{i}"), a, folded, 3)?;
        }
        init.conv_bn("aspp.fuse", a, 4 * a, 1)?;
        let d = cfg.decoder_channels;
        for (name, out, bias) in [("sem", CLASSES, 0.0), ("dep", 1, DEPTH_BIAS_INIT)] {
            init.conv_bn(&format!("{name}.c1"), d, a + coord_channels(cfg.azimuth_harmonics), 1)?;
            init.conv_bn(&format!("{name}.c2"), d, d, 1)?;
            init.head(&format!("{name}.out"), out, d, bias)?;
        }
        let sw = s3r_widths(&cfg);
        let mut cin = a;
        for (i, &c) in sw.iter().enumerate() {
            let (k, stride) = if i < 4 { (4, 2) } else { (3, 1) };
            init.up_bn(&format!("s3r.up{i}"), cin, c, k, stride)?;
            cin = c;
        }
        init.head("s3r.out", 4 * cfg.target_pairs.len(), cin, 0.0)?;
        Ok(Self { cfg, store })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Runs the encoder and ASPP on `input [branches·n, 1, F, T]`, where
    /// rows `b·n .. (b+1)·n` hold branch `b`. Returns the per-branch encoder
    /// output (before folding) and the fused feature map.
    fn encode_inner<T: Real>(&self, ctx: &mut Ctx<'_, T>, input: Var) -> Result<(Var, Var), ModelError> {
        let mut x = input;
        for i in 0..ENCODER_LAYERS {
            x = ctx.conv_bn_relu(&format!("enc{i}"), x, |h, w, k| ConvGeometry::same(h, w, k, k, 2, 1))?;
        }
        let branches = ctx.tape.value(x).dims4().unwrap()[0] / (ctx.tape.value(input).dims4().unwrap()[0] / self.cfg.branches());
        let folded = ctx.tape.batch_to_channels(x, branches)?;
        let mut parts = vec![ctx.conv_bn_relu("aspp.b0", folded, pointwise)?];
        for (i, &d) in self.cfg.effective_dilations().iter().enumerate() {
            parts.push(ctx.conv_bn_relu(&format!("aspp.b{}", i + 1), folded, |h, w, k| ConvGeometry::same(h, w, k, k, 1, d))?);
        }
        let cat = ctx.tape.concat(&parts, 1)?;
        let feat = ctx.conv_bn_relu("aspp.fuse", cat, pointwise)?;
        Ok((x, feat))
    }

    fn grid_decoder<T: Real>(&self, ctx: &mut Ctx<'_, T>, name: &str, feat: Var, coords: Var) -> Result<Var, ModelError> {
        let (rows, cols) = self.cfg.output_grid;
        let feat = if self.cfg.global_pool {
            ctx.tape.global_avg_pool(feat)?
        } else {
            feat
        };
        let up = ctx.tape.resize_bilinear(feat, rows, cols)?;
        let x = ctx.tape.concat(&[up, coords], 1)?;
        let x = ctx.conv_bn_relu(&format!("{name}.c1"), x, pointwise)?;
        let x = ctx.conv_bn_relu(&format!("{name}.c2"), x, pointwise)?;
        ctx.head(&format!("{name}.out"), x)
    }

    fn s3r_decoder<T: Real>(&self, ctx: &mut Ctx<'_, T>, feat: Var) -> Result<Var, ModelError> {
        let mut x = feat;
        for i in 0..5 {
            x = if i < 4 {
                ctx.up_bn_relu(&format!("s3r.up{i}"), x, 2, 1)?
            } else {
                ctx.up_bn_relu(&format!("s3r.up{i}"), x, 1, 1)?
            };
        }
        let z = ctx.head("s3r.out", x)?;
        let s = ctx.tape.sigmoid(z)?;
        let m = ctx.tape.affine(s, T::from_f64(2.0), T::from_f64(-1.0))?;
        let (f, t) = self.cfg.spec_shape;
        Ok(ctx.tape.crop(m, 0, 0, f, t)?)
    }

    fn check_input<T: Real>(&self, tape: &Tape<T>, input: Var) -> Result<usize, ModelError> {
        let shape = tape.shape(input);
        let (f, t) = self.cfg.spec_shape;
        let e = self.cfg.branches();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != f || shape[3] != t || shape[0] % e != 0 || shape[0] == 0 {
            return Err(ModelError::Ad(AdError::ShapeMismatch(format!(
                "model input {shape:?}, expected [{e}·n, 1, {f}, {t}]"
            ))));
        }
        Ok(shape[0] / e)
    }

    /// Encoder only: per-branch feature maps `[branches·n, 8·base, h, w]`
    /// and the ASPP output `[n, aspp_filters, h, w]`.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, input: Var, mode: BnMode) -> Result<(Var, Var), ModelError> {
        self.check_input(tape, input)?;
        let mut ctx = Ctx {
            tape,
            store: &self.store,
            mode,
            vars: BTreeMap::new(),
            stats: Vec::new(),
        };
        self.encode_inner(&mut ctx, input)
    }

    /// One shared encoder pass feeding every enabled decoder.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: Var, mode: BnMode) -> Result<(OutputVars, BnRecord<T>), ModelError> {
        self.forward_with(tape, input, mode, BTreeMap::new())
    }

    /// [`Model::forward`] with some parameters supplied as existing tape
    /// variables, keyed by parameter name. Used to differentiate with
    /// respect to parameters held at full precision.
    pub fn forward_with<T: Real>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        mode: BnMode,
        params: BTreeMap<String, Var>,
    ) -> Result<(OutputVars, BnRecord<T>), ModelError> {
        let n = self.check_input(tape, input)?;
        let mut ctx = Ctx {
            tape,
            store: &self.store,
            mode,
            vars: params,
            stats: Vec::new(),
        };
        let (_, feat) = self.encode_inner(&mut ctx, input)?;
        let tasks = self.cfg.tasks;
        let coords = if tasks.semantic || tasks.depth {
            let (rows, cols) = self.cfg.output_grid;
            let h = self.cfg.azimuth_harmonics;
            let one = coordinate_channels(rows, cols, h);
            let mut data = Vec::with_capacity(n * one.len());
            for _ in 0..n {
                data.extend(one.iter().map(|&v| T::from_f64(v as f64)));
            }
            Some(ctx.tape.constant(Tensor::new(&[n, coord_channels(h), rows, cols], data).unwrap())?)
        } else {
            None
        };
        let semantic_logits = match (tasks.semantic, coords) {
            (true, Some(c)) => Some(self.grid_decoder(&mut ctx, "sem", feat, c)?),
            _ => None,
        };
        let depth_norm = match (tasks.depth, coords) {
            (true, Some(c)) => {
                let z = self.grid_decoder(&mut ctx, "dep", feat, c)?;
                Some(ctx.tape.relu(z)?)
            }
            _ => None,
        };
        let s3r_masks = if tasks.s3r { Some(self.s3r_decoder(&mut ctx, feat)?) } else { None };
        Ok((
            OutputVars {
                semantic_logits,
                depth_norm,
                s3r_masks,
            },
            ctx.stats,
        ))
    }

    /// Eval-mode inference on a float32 input tensor.
    pub fn predict(&self, input: Tensor<f32>) -> Result<ModelOutput, ModelError> {
        let mut tape = Tape::new();
        let x = tape.constant(input)?;
        let (out, _) = self.forward(&mut tape, x, BnMode::Eval)?;
        let semantic = match out.semantic_logits {
            Some(l) => {
                let p = tape.softmax(l, 1)?;
                Some(tape.value(p).clone())
            }
            None => None,
        };
        let far = self.cfg.far_depth as f32;
        let depth = out.depth_norm.map(|d| {
            let t = tape.value(d);
            Tensor::new(t.shape(), t.data().iter().map(|v| v * far).collect()).unwrap()
        });
        let s3r_masks = out.s3r_masks.map(|m| tape.value(m).clone());
        Ok(ModelOutput {
            semantic,
            depth,
            s3r_masks,
        })
    }

    /// Folds train-mode batch statistics into the running buffers.
    pub fn update_running_stats<T: Real>(&mut self, stats: &BnRecord<T>) {
        let m = self.cfg.bn_momentum;
        for (name, s) in stats {
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            if let Some(rm) = self.store.buffer_mut(&format!("{name}.running_mean")) {
                for (r, &v) in rm.data_mut().iter_mut().zip(&s.mean) {
                    *r = ((1.0 - m) * *r as f64 + m * v.to_f64()) as f32;
                }
            }
            if let Some(rv) = self.store.buffer_mut(&format!("{name}.running_var")) {
                for (r, &v) in rv.data_mut().iter_mut().zip(&s.var) {
                    *r = ((1.0 - m) * *r as f64 + m * v.to_f64() * unbias) as f32;
                }
            }
        }
    }

    /// Writes the parameter store to `path` and the settings next to it
    /// with a `.cfg` extension.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.store.save(path)?;
        let cfg = path.with_extension("cfg");
        std::fs::write(&cfg, self.cfg.to_text()).map_err(|e| IoError::at(&cfg, e))?;
        Ok(())
    }

    /// Reads a checkpoint written by [`Model::save`]. A missing or
    /// unreadable file counts as a corrupt checkpoint.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let corrupt = |m: String| ModelError::Ad(AdError::CheckpointCorrupt(m));
        let cfg_path = path.with_extension("cfg");
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| corrupt(format!("{}: {e}", cfg_path.display())))?;
        let cfg = ModelConfig::from_text(&text).map_err(|e| corrupt(format!("{}: {e}", cfg_path.display())))?;
        let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        let stored = ParamStore::from_bytes(&bytes)?;
        let mut model = Model::new(cfg, 0)?;
        model.store.restore_from(&stored)?;
        Ok(model)
    }

    /// Names of the parameters owned by each decoder.
    pub fn decoder_parameter_names(&self, prefix: &str) -> Vec<String> {
        self.store
            .params()
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.name.clone())
            .collect()
    }
}
