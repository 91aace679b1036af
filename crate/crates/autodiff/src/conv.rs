//! Convolution kernels on plain slices. The tape calls the im2col/GEMM
//! path; [`conv2d_direct`] is an independent loop implementation kept as a
//! reference.

use crate::real::Real;

/// Geometry of a 2-D convolution. Padding is `[top, bottom, left, right]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub pad: [usize; 4],
}

impl ConvGeometry {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            pad: [padding; 4],
        }
    }

    /// Padding that makes the output `ceil(input / stride)` along each axis,
    /// with the odd extra row/column at the bottom/right.
    pub fn same(h: usize, w: usize, kh: usize, kw: usize, stride: usize, dilation: usize) -> Self {
        let total = |n: usize, k: usize| {
            let out = n.div_ceil(stride);
            ((out - 1) * stride + dilation * (k - 1) + 1).saturating_sub(n)
        };
        let (th, tw) = (total(h, kh), total(w, kw));
        Self {
            stride,
            dilation,
            pad: [th / 2, th - th / 2, tw / 2, tw - tw / 2],
        }
    }

    /// Output extent along one axis, if at least one.
    pub fn out_len(n: usize, k: usize, stride: usize, dilation: usize, pad_lo: usize, pad_hi: usize) -> Option<usize> {
        let padded = n + pad_lo + pad_hi;
        let span = dilation * (k - 1) + 1;
        (stride > 0 && padded >= span).then(|| (padded - span) / stride + 1)
    }

    pub fn out_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let [t, b, l, r] = self.pad;
        Some((
            Self::out_len(h, kh, self.stride, self.dilation, t, b)?,
            Self::out_len(w, kw, self.stride, self.dilation, l, r)?,
        ))
    }
}

/// Column buffer `[c·kh·kw, oh·ow]` for one image `[c, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let [pt, _, pl, _] = g.pad;
    let (s, d) = (g.stride, g.dilation);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ci * kh + i) * kw + j) * oh * ow;
                let out = &mut cols[row..row + oh * ow];
                for oy in 0..oh {
                    let y = (oy * s + i * d) as isize - pt as isize;
                    let dst = &mut out[oy * ow..(oy + 1) * ow];
                    if y < 0 || y >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[y as usize * w..(y as usize + 1) * w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let xx = (ox * s + j * d) as isize - pl as isize;
                        *v = if xx >= 0 && xx < w as isize { src[xx as usize] } else { T::ZERO };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into `x` (accumulating).
#[allow(clippy::too_many_arguments)]
pub fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let [pt, _, pl, _] = g.pad;
    let (s, d) = (g.stride, g.dilation);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for i in 0..kh {
            for j in 0..kw {
                let row = ((ci * kh + i) * kw + j) * oh * ow;
                let src = &cols[row..row + oh * ow];
                for oy in 0..oh {
                    let y = (oy * s + i * d) as isize - pt as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * w..(y as usize + 1) * w];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let xx = (ox * s + j * d) as isize - pl as isize;
                        if xx >= 0 && xx < w as isize {
                            dst[xx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Plain nested-loop cross-correlation: `x [n,c,h,w]`, `weight [f,c,kh,kw]`.
pub fn conv2d_direct<T: Real>(
    x: &[T],
    xdims: [usize; 4],
    weight: &[T],
    wdims: [usize; 4],
    g: &ConvGeometry,
) -> Option<(Vec<T>, [usize; 4])> {
    let [n, c, h, w] = xdims;
    let [f, wc, kh, kw] = wdims;
    if wc != c {
        return None;
    }
    let (oh, ow) = g.out_hw(h, w, kh, kw)?;
    let mut out = vec![T::ZERO; n * f * oh * ow];
    for b in 0..n {
        for fo in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::ZERO;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * g.stride + i * g.dilation) as isize - g.pad[0] as isize;
                                let xx = (ox * g.stride + j * g.dilation) as isize - g.pad[2] as isize;
                                if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                                    acc += x[((b * c + ci) * h + y as usize) * w + xx as usize] * weight[((fo * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((b * f + fo) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Some((out, [n, f, oh, ow]))
}
