//! Reverse-mode tape. Every forward op appends a node holding its output and
//! whatever the backward rule needs; [`Tape::backward`] walks the nodes in
//! reverse creation order, which is a valid topological order.

use crate::conv::{col2im, im2col, ConvGeometry};
use crate::params::ParamId;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::AdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch statistics of one batch-norm call (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

/// Bilinear sampling table along one axis: `(lo, hi, weight of hi)`.
type Taps<T> = Vec<(usize, usize, T)>;

enum Op<T> {
    Constant,
    Leaf,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        g: ConvGeometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        stride: usize,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: BnMode,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        outer: usize,
        axis: usize,
        inner: usize,
    },
    Resize {
        x: Var,
        ty: Taps<T>,
        tx: Taps<T>,
    },
    Concat {
        xs: Vec<Var>,
        outer: usize,
        inner: usize,
    },
    BatchToChannels {
        x: Var,
        groups: usize,
    },
    BiasAdd {
        x: Var,
        b: Var,
    },
    Affine {
        x: Var,
        a: T,
    },
    Add(Var, Var),
    GlobalAvgPool(Var),
    Sum(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, T)>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        weights: Option<Vec<T>>,
        probs: Vec<T>,
        norm: T,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
    ComplexMaskMse {
        mask: Var,
        spec: Vec<T>,
        target: Vec<T>,
        pairs: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Crop { .. } => "crop",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Resize { .. } => "resize_bilinear",
            Op::Concat { .. } => "concat",
            Op::BatchToChannels { .. } => "batch_to_channels",
            Op::BiasAdd { .. } => "bias_add",
            Op::Affine { .. } => "affine",
            Op::Add(..) => "add",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::WeightedSum(_) => "weighted_sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
            Op::ComplexMaskMse { .. } => "complex_mask_mse",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Leaf | Op::Param(_) => vec![],
            Op::Conv2d { x, w, .. } | Op::ConvTranspose2d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::BiasAdd { x, b } => vec![*x, *b],
            Op::Add(a, b) => vec![*a, *b],
            Op::Concat { xs, .. } => xs.clone(),
            Op::WeightedSum(terms) => terms.iter().map(|t| t.0).collect(),
            Op::Crop { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Softmax { x, .. }
            | Op::Resize { x, .. }
            | Op::BatchToChannels { x, .. }
            | Op::Affine { x, .. }
            | Op::GlobalAvgPool(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::CrossEntropy { logits: x, .. }
            | Op::Mse { pred: x, .. }
            | Op::ComplexMaskMse { mask: x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Grads<T> {
    by_node: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(parameter, gradient)` for every parameter used on the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&[T]>)> + '_ {
        self.params.iter().map(|&(id, v)| (id, self.get(v)))
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &str, msg: String) -> AdError {
    AdError::ShapeMismatch(format!("{op}: {msg}"))
}

/// Sizes before, along and after `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Source taps for resizing `n_in` samples to `n_out` with half-pixel
/// centers (align-corners = false).
fn taps<T: Real>(n_in: usize, n_out: usize) -> Taps<T> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, T::from_f64(src - lo as f64))
        })
        .collect()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims4(&self, v: Var, op: &str) -> Result<[usize; 4], AdError> {
        self.value(v)
            .dims4()
            .ok_or_else(|| shape_err(op, format!("expected a 4-D tensor, got {:?}", self.shape(v))))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, AdError> {
        if !value.all_finite() {
            return Err(AdError::NonFinite(op.name()));
        }
        let needs_grad = match op {
            Op::Constant => false,
            Op::Leaf | Op::Param(_) => true,
            _ => op.inputs().iter().any(|&i| self.needs(i)),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var, AdError> {
        self.push(t, Op::Constant)
    }

    /// An input whose gradient is wanted.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var, AdError> {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, t: Tensor<T>) -> Result<Var, AdError> {
        self.push(t, Op::Param(id))
    }

    /// Cross-correlation of `x [n,c,h,w]` with `w [f,c,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, g: ConvGeometry) -> Result<Var, AdError> {
        let [n, c, h, wd] = self.dims4(x, "conv2d")?;
        let [f, wc, kh, kw] = self.dims4(w, "conv2d")?;
        if wc != c {
            return Err(shape_err("conv2d", format!("input has {c} channels, weight expects {wc}")));
        }
        let (oh, ow) = g
            .out_hw(h, wd, kh, kw)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {kh}x{kw} does not fit {h}x{wd}")))?;
        let ckk = c * kh * kw;
        let pointwise = kh == 1 && kw == 1 && g.stride == 1 && g.pad == [0; 4];
        let mut out = vec![T::ZERO; n * f * oh * ow];
        let mut cols = if pointwise { Vec::new() } else { vec![T::ZERO; ckk * oh * ow] };
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for b in 0..n {
            let xb = &xv[b * c * h * wd..(b + 1) * c * h * wd];
            let colsb: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, c, h, wd, kh, kw, &g, oh, ow, &mut cols);
                &cols
            };
            T::gemm(
                f,
                ckk,
                oh * ow,
                wv,
                false,
                colsb,
                false,
                T::ZERO,
                &mut out[b * f * oh * ow..(b + 1) * f * oh * ow],
            );
        }
        self.push(Tensor::new(&[n, f, oh, ow], out).unwrap(), Op::Conv2d { x, w, g })
    }

    /// Transposed convolution of `x [n,cin,h,w]` with `w [cin,cout,kh,kw]`;
    /// output `[(h-1)·stride + kh, (w-1)·stride + kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var, AdError> {
        let [n, cin, h, wd] = self.dims4(x, "conv_transpose2d")?;
        let [wcin, cout, kh, kw] = self.dims4(w, "conv_transpose2d")?;
        if wcin != cin || stride == 0 {
            return Err(shape_err(
                "conv_transpose2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        let (oh, ow) = ((h - 1) * stride + kh, (wd - 1) * stride + kw);
        let g = ConvGeometry::new(stride, 1, 0);
        let ckk = cout * kh * kw;
        let mut out = vec![T::ZERO; n * cout * oh * ow];
        let mut cols = vec![T::ZERO; ckk * h * wd];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for b in 0..n {
            T::gemm(
                ckk,
                cin,
                h * wd,
                wv,
                true,
                &xv[b * cin * h * wd..(b + 1) * cin * h * wd],
                false,
                T::ZERO,
                &mut cols,
            );
            col2im(
                &cols,
                cout,
                oh,
                ow,
                kh,
                kw,
                &g,
                h,
                wd,
                &mut out[b * cout * oh * ow..(b + 1) * cout * oh * ow],
            );
        }
        self.push(Tensor::new(&[n, cout, oh, ow], out).unwrap(), Op::ConvTranspose2d { x, w, stride })
    }

    /// Spatial window `[top..top+h, left..left+w]` of a 4-D tensor.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var, AdError> {
        let [n, c, ih, iw] = self.dims4(x, "crop")?;
        if top + h > ih || left + w > iw {
            return Err(shape_err("crop", format!("window {h}x{w}+{top}+{left} exceeds {ih}x{iw}")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in top..top + h {
                let row = (p * ih + y) * iw;
                out.extend_from_slice(&xv[row + left..row + left + w]);
            }
        }
        self.push(Tensor::new(&[n, c, h, w], out).unwrap(), Op::Crop { x, top, left })
    }

    /// Per-channel batch norm. In train mode statistics come from the batch
    /// and are returned; in eval mode `running` supplies (mean, var).
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, BnStats<T>), AdError> {
        let [n, c, h, w] = self.dims4(x, "batchnorm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err(
                "batchnorm",
                format!(
                    "{c} channels but gamma/beta sized {}/{}",
                    self.value(gamma).len(),
                    self.value(beta).len()
                ),
            ));
        }
        let hw = h * w;
        let m = n * hw;
        let xv = self.value(x).data();
        let (mean, var) = match mode {
            BnMode::Train => {
                if m < 2 {
                    return Err(AdError::DegenerateBatch(m));
                }
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        s += xv[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|v| v.to_f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut q = 0.0f64;
                    for b in 0..n {
                        q += xv[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v.to_f64() - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = T::from_f64(mu);
                    var[ch] = T::from_f64(q / m as f64);
                }
                (mean, var)
            }
            BnMode::Eval => {
                let (rm, rv) = running.ok_or_else(|| shape_err("batchnorm", "eval mode needs running statistics".into()))?;
                if rm.len() != c || rv.len() != c {
                    return Err(shape_err("batchnorm", format!("running stats sized {} for {c} channels", rm.len())));
                }
                (rm.to_vec(), rv.to_vec())
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::ZERO; xv.len()];
        let mut out = vec![T::ZERO; xv.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gv[ch] * xh + bv[ch];
                }
            }
        }
        let stats = BnStats { mean, var, count: m };
        let v = self.push(
            Tensor::new(&[n, c, h, w], out).unwrap(),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
        )?;
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(&shape, data).unwrap(), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AdError> {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| {
                // Split by sign so exp never overflows.
                if v >= T::ZERO {
                    T::ONE / (T::ONE + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::ONE + e)
                }
            })
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(&shape, data).unwrap(), Op::Sigmoid(x))
    }

    /// Softmax along `axis`, stabilized by subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, AdError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} of rank {}", shape.len())));
        }
        let (outer, k, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![T::ZERO; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * k + j) * inner + i;
                let mx = (0..k).map(|j| xv[at(j)]).fold(xv[at(0)], T::max);
                let mut z = T::ZERO;
                for j in 0..k {
                    let e = (xv[at(j)] - mx).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..k {
                    out[at(j)] /= z;
                }
            }
        }
        self.push(Tensor::new(&shape, out).unwrap(), Op::Softmax { x, outer, axis: k, inner })
    }

    /// Bilinear resize of the two trailing axes (align-corners = false).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var, AdError> {
        let [n, c, h, w] = self.dims4(x, "resize_bilinear")?;
        if oh == 0 || ow == 0 {
            return Err(shape_err("resize_bilinear", "empty output".into()));
        }
        let ty: Taps<T> = taps(h, oh);
        let tx: Taps<T> = taps(w, ow);
        let xv = self.value(x).data();
        let mut out = vec![T::ZERO; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (T::ONE - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (T::ONE - fx) + src[y1 * w + x1] * fx;
                    dst[oy * ow + ox] = top * (T::ONE - fy) + bot * fy;
                }
            }
        }
        self.push(Tensor::new(&[n, c, oh, ow], out).unwrap(), Op::Resize { x, ty, tx })
    }

    /// Integer-factor bilinear upsampling.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var, AdError> {
        let [_, _, h, w] = self.dims4(x, "upsample_bilinear")?;
        if factor == 0 {
            return Err(shape_err("upsample_bilinear", "factor must be at least 1".into()));
        }
        self.resize_bilinear(x, h * factor, w * factor)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, AdError> {
        let first = self
            .shape(*xs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} of rank {}", first.len())));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", format!("{:?} vs {:?} along axis {axis}", s, first)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let k = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * k * inner..(o + 1) * k * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Tensor::new(&shape, out).unwrap(),
            Op::Concat {
                xs: xs.to_vec(),
                outer,
                inner,
            },
        )
    }

    /// `[g·n, c, h, w] -> [n, g·c, h, w]`: batch block `k` becomes channel
    /// block `k`. Lets several inputs run through one shared stack as a
    /// single batch and then sit side by side as channels.
    pub fn batch_to_channels(&mut self, x: Var, groups: usize) -> Result<Var, AdError> {
        let [gn, c, h, w] = self.dims4(x, "batch_to_channels")?;
        if groups == 0 || gn % groups != 0 {
            return Err(shape_err(
                "batch_to_channels",
                format!("batch {gn} not divisible into {groups} groups"),
            ));
        }
        let n = gn / groups;
        let plane = c * h * w;
        let xv = self.value(x).data();
        let mut out = vec![T::ZERO; xv.len()];
        for k in 0..groups {
            for b in 0..n {
                let src = &xv[(k * n + b) * plane..(k * n + b + 1) * plane];
                let dst = (b * groups + k) * plane;
                out[dst..dst + plane].copy_from_slice(src);
            }
        }
        self.push(Tensor::new(&[n, groups * c, h, w], out).unwrap(), Op::BatchToChannels { x, groups })
    }

    /// Adds `b[c]` to channel `c` of a 4-D tensor.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var, AdError> {
        let [n, c, h, w] = self.dims4(x, "bias_add")?;
        if self.value(b).len() != c {
            return Err(shape_err("bias_add", format!("{c} channels, bias of {}", self.value(b).len())));
        }
        let bv = self.value(b).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for (i, chunk) in out.chunks_mut(h * w).enumerate() {
            let add = bv[i % c];
            chunk.iter_mut().for_each(|v| *v += add);
        }
        self.push(Tensor::new(&[n, c, h, w], out).unwrap(), Op::BiasAdd { x, b })
    }

    /// `a·x + b` with constant scalars.
    pub fn affine(&mut self, x: Var, a: T, b: T) -> Result<Var, AdError> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| a * v + b).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(&shape, data).unwrap(), Op::Affine { x, a })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(&shape, data).unwrap(), Op::Add(a, b))
    }

    /// Mean over the two trailing axes, keeping them as size 1.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AdError> {
        let [n, c, h, w] = self.dims4(x, "global_avg_pool")?;
        if h * w == 0 {
            return Err(shape_err("global_avg_pool", "empty spatial extent".into()));
        }
        let area = T::from_usize(h * w);
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / area)
            .collect();
        self.push(Tensor::new(&[n, c, 1, 1], out).unwrap(), Op::GlobalAvgPool(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AdError> {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_usize(t.len().max(1));
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// `Σ wᵢ·xᵢ` over scalar inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var, AdError> {
        let mut s = T::ZERO;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(shape_err(
                    "weighted_sum",
                    format!("term of shape {:?} is not scalar", self.shape(v)),
                ));
            }
            s += w * self.value(v).item();
        }
        self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()))
    }

    /// Mean negative log-likelihood of `labels [n·h·w]` under
    /// `softmax(logits [n,k,h,w])` along the class axis. With class weights
    /// the mean is weighted by the label's weight.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: Option<&[T]>) -> Result<Var, AdError> {
        let [n, k, h, w] = self.dims4(logits, "cross_entropy")?;
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for {} positions", labels.len(), n * hw),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(AdError::LabelOutOfRange { label: bad, classes: k });
        }
        if weights.is_some_and(|ws| ws.len() != k) {
            return Err(shape_err("cross_entropy", format!("class weights must have {k} entries")));
        }
        let xv = self.value(logits).data();
        let mut probs = vec![T::ZERO; xv.len()];
        let mut total = T::ZERO;
        let mut norm = T::ZERO;
        for b in 0..n {
            for i in 0..hw {
                let at = |j: usize| (b * k + j) * hw + i;
                let mx = (0..k).map(|j| xv[at(j)]).fold(xv[at(0)], T::max);
                let mut z = T::ZERO;
                for j in 0..k {
                    let e = (xv[at(j)] - mx).exp();
                    probs[at(j)] = e;
                    z += e;
                }
                for j in 0..k {
                    probs[at(j)] /= z;
                }
                let y = labels[b * hw + i];
                let wy = weights.map_or(T::ONE, |ws| ws[y]);
                total += wy * (z.ln() + mx - xv[at(y)]);
                norm += wy;
            }
        }
        let norm = if norm > T::ZERO { norm } else { T::ONE };
        self.push(
            Tensor::scalar(total / norm),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.map(|w| w.to_vec()),
                probs,
                norm,
            },
        )
    }

    /// Mean squared difference to a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, AdError> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", self.shape(pred), target.shape())));
        }
        let p = self.value(pred).data();
        let s: T = p.iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let m = s / T::from_usize(p.len().max(1));
        self.push(
            Tensor::scalar(m),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
        )
    }

    /// Mean of `|M·S − D|²` over complex cells.
    ///
    /// `mask [n, 4p, f, t]` holds, for pair `q` and ear `e`, the real part in
    /// channel `4q + 2e` and the imaginary part in `4q + 2e + 1`.
    /// `spec [n, 4, f, t]` is the reference spectrogram as (re, im) per ear
    /// and `target [n, 4p, f, t]` the difference spectrograms laid out like
    /// the mask.
    pub fn complex_mask_mse(&mut self, mask: Var, spec: &Tensor<T>, target: &Tensor<T>) -> Result<Var, AdError> {
        let [n, c, f, t] = self.dims4(mask, "complex_mask_mse")?;
        if c % 4 != 0 || c == 0 {
            return Err(shape_err("complex_mask_mse", format!("{c} mask channels is not a multiple of 4")));
        }
        if spec.shape() != [n, 4, f, t] || target.shape() != [n, c, f, t] {
            return Err(shape_err(
                "complex_mask_mse",
                format!("mask {:?}, spec {:?}, target {:?}", self.shape(mask), spec.shape(), target.shape()),
            ));
        }
        let pairs = c / 4;
        let ft = f * t;
        let mv = self.value(mask).data();
        let (sv, tv) = (spec.data(), target.data());
        let mut total = T::ZERO;
        for b in 0..n {
            for q in 0..pairs {
                for e in 0..2 {
                    let mr = &mv[(b * c + 4 * q + 2 * e) * ft..][..ft];
                    let mi = &mv[(b * c + 4 * q + 2 * e + 1) * ft..][..ft];
                    let sr = &sv[(b * 4 + 2 * e) * ft..][..ft];
                    let si = &sv[(b * 4 + 2 * e + 1) * ft..][..ft];
                    let dr = &tv[(b * c + 4 * q + 2 * e) * ft..][..ft];
                    let di = &tv[(b * c + 4 * q + 2 * e + 1) * ft..][..ft];
                    for i in 0..ft {
                        let er = mr[i] * sr[i] - mi[i] * si[i] - dr[i];
                        let ei = mr[i] * si[i] + mi[i] * sr[i] - di[i];
                        total += er * er + ei * ei;
                    }
                }
            }
        }
        let count = T::from_usize(n * pairs * 2 * ft);
        self.push(
            Tensor::scalar(total / count),
            Op::ComplexMaskMse {
                mask,
                spec: sv.to_vec(),
                target: tv.to_vec(),
                pairs,
            },
        )
    }

    /// Backpropagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads<T>, AdError> {
        if self.value(root).len() != 1 {
            return Err(shape_err("backward", format!("root has shape {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::ONE]);
        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Grads { by_node: grads, params })
    }

    /// Gradient slot for `v`, or `None` when `v` needs no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.needs(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::ZERO; len]))
    }

    fn backward_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, w, g } => {
                let [n, c, h, wd] = self.value(*x).dims4().unwrap();
                let [f, _, kh, kw] = self.value(*w).dims4().unwrap();
                let [_, _, oh, ow] = node.value.dims4().unwrap();
                let ckk = c * kh * kw;
                let pointwise = kh == 1 && kw == 1 && g.stride == 1 && g.pad == [0; 4];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let want_x = self.needs(*x);
                let mut cols = vec![T::ZERO; ckk * oh * ow];
                let mut dw = self.needs(*w).then(|| vec![T::ZERO; wv.len()]);
                let mut dx = want_x.then(|| vec![T::ZERO; xv.len()]);
                for b in 0..n {
                    let gyb = &gy[b * f * oh * ow..(b + 1) * f * oh * ow];
                    let xb = &xv[b * c * h * wd..(b + 1) * c * h * wd];
                    if let Some(dw) = dw.as_mut() {
                        let colsb: &[T] = if pointwise {
                            xb
                        } else {
                            im2col(xb, c, h, wd, kh, kw, g, oh, ow, &mut cols);
                            &cols
                        };
                        T::gemm(f, oh * ow, ckk, gyb, false, colsb, true, T::ONE, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dxb = &mut dx[b * c * h * wd..(b + 1) * c * h * wd];
                        if pointwise {
                            T::gemm(ckk, f, oh * ow, wv, true, gyb, false, T::ONE, dxb);
                        } else {
                            T::gemm(ckk, f, oh * ow, wv, true, gyb, false, T::ZERO, &mut cols);
                            col2im(&cols, c, h, wd, kh, kw, g, oh, ow, dxb);
                        }
                    }
                }
                if let (Some(d), Some(s)) = (dw, self.slot(grads, *w)) {
                    add_into(s, &d);
                }
                if let (Some(d), Some(s)) = (dx, self.slot(grads, *x)) {
                    add_into(s, &d);
                }
            }
            Op::ConvTranspose2d { x, w, stride } => {
                let [n, cin, h, wd] = self.value(*x).dims4().unwrap();
                let [_, cout, kh, kw] = self.value(*w).dims4().unwrap();
                let [_, _, oh, ow] = node.value.dims4().unwrap();
                let g = ConvGeometry::new(*stride, 1, 0);
                let ckk = cout * kh * kw;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut cols = vec![T::ZERO; ckk * h * wd];
                let mut dw = self.needs(*w).then(|| vec![T::ZERO; wv.len()]);
                let mut dx = self.needs(*x).then(|| vec![T::ZERO; xv.len()]);
                for b in 0..n {
                    im2col(
                        &gy[b * cout * oh * ow..(b + 1) * cout * oh * ow],
                        cout,
                        oh,
                        ow,
                        kh,
                        kw,
                        &g,
                        h,
                        wd,
                        &mut cols,
                    );
                    if let Some(dx) = dx.as_mut() {
                        T::gemm(
                            cin,
                            ckk,
                            h * wd,
                            wv,
                            false,
                            &cols,
                            false,
                            T::ONE,
                            &mut dx[b * cin * h * wd..(b + 1) * cin * h * wd],
                        );
                    }
                    if let Some(dw) = dw.as_mut() {
                        T::gemm(
                            cin,
                            h * wd,
                            ckk,
                            &xv[b * cin * h * wd..(b + 1) * cin * h * wd],
                            false,
                            &cols,
                            true,
                            T::ONE,
                            dw,
                        );
                    }
                }
                if let (Some(d), Some(s)) = (dw, self.slot(grads, *w)) {
                    add_into(s, &d);
                }
                if let (Some(d), Some(s)) = (dx, self.slot(grads, *x)) {
                    add_into(s, &d);
                }
            }
            Op::Crop { x, top, left } => {
                let [_, _, ih, iw] = self.value(*x).dims4().unwrap();
                let [n, c, h, w] = node.value.dims4().unwrap();
                if let Some(s) = self.slot(grads, *x) {
                    for p in 0..n * c {
                        for yy in 0..h {
                            let src = &gy[(p * h + yy) * w..][..w];
                            let dst = &mut s[(p * ih + top + yy) * iw + left..][..w];
                            add_into(dst, src);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            } => {
                let [n, c, h, w] = node.value.dims4().unwrap();
                let hw = h * w;
                let m = T::from_usize(n * hw);
                let gv = self.value(*gamma).data();
                let mut sum_dy = vec![T::ZERO; c];
                let mut sum_dy_xhat = vec![T::ZERO; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * hw;
                        for i in base..base + hw {
                            sum_dy[ch] += gy[i];
                            sum_dy_xhat[ch] += gy[i] * xhat[i];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *x) {
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * hw;
                            let k = gv[ch] * inv_std[ch];
                            for i in base..base + hw {
                                s[i] += match mode {
                                    BnMode::Train => k * (gy[i] - sum_dy[ch] / m - xhat[i] * sum_dy_xhat[ch] / m),
                                    BnMode::Eval => k * gy[i],
                                };
                            }
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *gamma) {
                    add_into(s, &sum_dy_xhat);
                }
                if let Some(s) = self.slot(grads, *beta) {
                    add_into(s, &sum_dy);
                }
            }
            Op::Relu(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &g), &out) in s.iter_mut().zip(gy).zip(y) {
                        if out > T::ZERO {
                            *d += g;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &g), &out) in s.iter_mut().zip(gy).zip(y) {
                        *d += g * out * (T::ONE - out);
                    }
                }
            }
            Op::Softmax { x, outer, axis, inner } => {
                let (outer, k, inner) = (*outer, *axis, *inner);
                if let Some(s) = self.slot(grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * k + j) * inner + i;
                            let dot: T = (0..k).map(|j| gy[at(j)] * y[at(j)]).sum();
                            for j in 0..k {
                                s[at(j)] += y[at(j)] * (gy[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Resize { x, ty, tx } => {
                let [n, c, h, w] = self.value(*x).dims4().unwrap();
                let (oh, ow) = (ty.len(), tx.len());
                if let Some(s) = self.slot(grads, *x) {
                    for p in 0..n * c {
                        let src = &gy[p * oh * ow..(p + 1) * oh * ow];
                        let dst = &mut s[p * h * w..(p + 1) * h * w];
                        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                                let g = src[oy * ow + ox];
                                let (gt, gb) = (g * (T::ONE - fy), g * fy);
                                dst[y0 * w + x0] += gt * (T::ONE - fx);
                                dst[y0 * w + x1] += gt * fx;
                                dst[y1 * w + x0] += gb * (T::ONE - fx);
                                dst[y1 * w + x1] += gb * fx;
                            }
                        }
                    }
                }
            }
            Op::Concat { xs, outer, inner } => {
                let total: usize = xs.iter().map(|&v| self.value(v).len() / (outer * inner)).sum();
                let mut offset = 0;
                for &v in xs {
                    let k = self.value(v).len() / (outer * inner);
                    if let Some(s) = self.slot(grads, v) {
                        for o in 0..*outer {
                            let src = &gy[(o * total + offset) * inner..][..k * inner];
                            add_into(&mut s[o * k * inner..(o + 1) * k * inner], src);
                        }
                    }
                    offset += k;
                }
            }
            Op::BatchToChannels { x, groups } => {
                let [gn, c, h, w] = self.value(*x).dims4().unwrap();
                let n = gn / groups;
                let plane = c * h * w;
                if let Some(s) = self.slot(grads, *x) {
                    for k in 0..*groups {
                        for b in 0..n {
                            let src = &gy[(b * groups + k) * plane..][..plane];
                            add_into(&mut s[(k * n + b) * plane..][..plane], src);
                        }
                    }
                }
            }
            Op::BiasAdd { x, b } => {
                let [_, c, h, w] = node.value.dims4().unwrap();
                if let Some(s) = self.slot(grads, *b) {
                    for (i, chunk) in gy.chunks(h * w).enumerate() {
                        s[i % c] += chunk.iter().copied().sum::<T>();
                    }
                }
                if let Some(s) = self.slot(grads, *x) {
                    add_into(s, gy);
                }
            }
            Op::Affine { x, a } => {
                if let Some(s) = self.slot(grads, *x) {
                    for (d, &g) in s.iter_mut().zip(gy) {
                        *d += *a * g;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = self.slot(grads, v) {
                        add_into(s, gy);
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.value(*x).dims4().unwrap();
                let area = T::from_usize(h * w);
                if let Some(s) = self.slot(grads, *x) {
                    for (p, &g) in s.chunks_mut(h * w).zip(gy) {
                        p.iter_mut().for_each(|d| *d += g / area);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().for_each(|d| *d += gy[0]);
                }
            }
            Op::Mean(x) => {
                let len = T::from_usize(self.value(*x).len().max(1));
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().for_each(|d| *d += gy[0] / len);
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if let Some(s) = self.slot(grads, v) {
                        s[0] += w * gy[0];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                weights,
                probs,
                norm,
            } => {
                let [n, k, h, w] = self.value(*logits).dims4().unwrap();
                let hw = h * w;
                if let Some(s) = self.slot(grads, *logits) {
                    for b in 0..n {
                        for i in 0..hw {
                            let yl = labels[b * hw + i];
                            let scale = gy[0] * weights.as_ref().map_or(T::ONE, |ws| ws[yl]) / *norm;
                            for j in 0..k {
                                let at = (b * k + j) * hw + i;
                                let onehot = if j == yl { T::ONE } else { T::ZERO };
                                s[at] += scale * (probs[at] - onehot);
                            }
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let k = T::from_f64(2.0) * gy[0] / T::from_usize(p.len().max(1));
                if let Some(s) = self.slot(grads, *pred) {
                    for ((d, &a), &b) in s.iter_mut().zip(p).zip(target) {
                        *d += k * (a - b);
                    }
                }
            }
            Op::ComplexMaskMse { mask, spec, target, pairs } => {
                let [n, c, f, t] = self.value(*mask).dims4().unwrap();
                let ft = f * t;
                let mv = self.value(*mask).data();
                let k = T::from_f64(2.0) * gy[0] / T::from_usize(n * pairs * 2 * ft);
                if let Some(s) = self.slot(grads, *mask) {
                    for b in 0..n {
                        for q in 0..*pairs {
                            for e in 0..2 {
                                let re_ch = (b * c + 4 * q + 2 * e) * ft;
                                let im_ch = re_ch + ft;
                                let sr = (b * 4 + 2 * e) * ft;
                                let si = sr + ft;
                                for i in 0..ft {
                                    let (mr, mi) = (mv[re_ch + i], mv[im_ch + i]);
                                    let (xr, xi) = (spec[sr + i], spec[si + i]);
                                    let er = mr * xr - mi * xi - target[re_ch + i];
                                    let ei = mr * xi + mi * xr - target[im_ch + i];
                                    s[re_ch + i] += k * (er * xr + ei * xi);
                                    s[im_ch + i] += k * (ei * xr - er * xi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
