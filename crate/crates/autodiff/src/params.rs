//! Named parameters with Adam state, non-trainable buffers, and the
//! checkpoint file format.
//!
//! Checkpoint layout, little-endian:
//! `"BAPN"`, `u32` version, `u32` record count, then per record
//! `u8` kind (0 parameter, 1 buffer), `u32` name length, UTF-8 name,
//! `u32` rank, `u64` per dimension, `f32` data, and for parameters the
//! `f32` first and second moments followed by a `u64` step count.
//! A SHA-256 digest of everything before it closes the file.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::real::Real;
use crate::tape::Grads;
use crate::tensor::Tensor;
use crate::AdError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BAPN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient slot and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor<f32>,
    pub grad: Option<Vec<f32>>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Parameter {
    pub fn new(name: &str, tensor: Tensor<f32>) -> Self {
        let n = tensor.len();
        Self {
            name: name.to_string(),
            tensor,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Adds `g` into the gradient slot.
    pub fn accumulate<T: Real>(&mut self, g: &[T]) {
        let slot = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, &x) in slot.iter_mut().zip(g) {
            *s += x.to_f64() as f32;
        }
    }

    /// One bias-corrected Adam update; clears the gradient.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), AdError> {
        let grad = self.grad.take().ok_or_else(|| AdError::MissingGrad(self.name.clone()))?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in self.tensor.data_mut().iter_mut().enumerate() {
            let g = grad[i] as f64;
            let m = cfg.beta1 * self.m[i] as f64 + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * self.v[i] as f64 + (1.0 - cfg.beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let update = cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            *p = (*p as f64 - update) as f32;
        }
        Ok(())
    }
}

/// All parameters and buffers of a model, in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
    buffers: BTreeMap<String, Tensor<f32>>,
}

fn corrupt(msg: impl Into<String>) -> AdError {
    AdError::CheckpointCorrupt(msg.into())
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<f32>) -> Result<ParamId, AdError> {
        if self.index.contains_key(name) || self.buffers.contains_key(name) {
            return Err(AdError::ShapeMismatch(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter::new(name, tensor));
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<f32>) -> Result<(), AdError> {
        if self.index.contains_key(name) || self.buffers.contains_key(name) {
            return Err(AdError::ShapeMismatch(format!("duplicate buffer name {name}")));
        }
        self.buffers.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<f32> {
        &self.params[id.0].tensor
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<f32>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.buffers.get_mut(name)
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.buffers
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Adds the parameter gradients of one backward pass.
    pub fn accumulate<T: Real>(&mut self, grads: &Grads<T>) {
        for (id, g) in grads.params() {
            if let Some(g) = g {
                self.params[id.0].accumulate(g);
            }
        }
    }

    /// Adam update of every parameter holding a gradient. Parameters that
    /// took no part in the loss are left untouched.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), AdError> {
        for p in self.params.iter_mut().filter(|p| p.grad.is_some()) {
            p.adam_step(cfg)?;
        }
        Ok(())
    }

    /// Global L2 norm of the current gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|&x| (x as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&((self.params.len() + self.buffers.len()) as u32).to_le_bytes());
        let header = |out: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor<f32>| {
            out.push(kind);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        };
        let floats = |out: &mut Vec<u8>, xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for p in &self.params {
            header(&mut out, 0, &p.name, &p.tensor);
            floats(&mut out, p.tensor.data());
            floats(&mut out, &p.m);
            floats(&mut out, &p.v);
            out.extend_from_slice(&p.step.to_le_bytes());
        }
        for (name, t) in &self.buffers {
            header(&mut out, 1, name, t);
            floats(&mut out, t.data());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AdError> {
        if bytes.len() < 12 + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = Self::new();
        for _ in 0..count {
            let kind = r.take(1)?[0];
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| corrupt("shape overflow"))?;
            let data = r.floats(n)?;
            let tensor = Tensor::new(&shape, data).ok_or_else(|| corrupt("shape/data mismatch"))?;
            match kind {
                0 => {
                    let m = r.floats(n)?;
                    let v = r.floats(n)?;
                    let step = r.u64()?;
                    let id = store.add(&name, tensor).map_err(|_| corrupt(format!("duplicate record {name}")))?;
                    let p = store.get_mut(id);
                    p.m = m;
                    p.v = v;
                    p.step = step;
                }
                1 => store
                    .add_buffer(&name, tensor)
                    .map_err(|_| corrupt(format!("duplicate record {name}")))?,
                k => return Err(corrupt(format!("unknown record kind {k}"))),
            }
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), AdError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| AdError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AdError> {
        let bytes = std::fs::read(path).map_err(|e| AdError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Copies values, moments and buffers from `other`, which must hold the
    /// same names with the same shapes.
    pub fn restore_from(&mut self, other: &ParamStore) -> Result<(), AdError> {
        if other.params.len() != self.params.len() || other.buffers.len() != self.buffers.len() {
            return Err(corrupt("checkpoint does not match the model layout"));
        }
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.get(id))
                .ok_or_else(|| corrupt(format!("missing parameter {}", p.name)))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(corrupt(format!(
                    "shape of {} is {:?}, expected {:?}",
                    p.name,
                    src.tensor.shape(),
                    p.tensor.shape()
                )));
            }
            *p = src.clone();
        }
        for (name, t) in &mut self.buffers {
            let src = other.buffer(name).ok_or_else(|| corrupt(format!("missing buffer {name}")))?;
            if src.shape() != t.shape() {
                return Err(corrupt(format!("shape of buffer {name} differs")));
            }
            *t = src.clone();
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AdError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated record"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AdError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AdError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>, AdError> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
