//! The six layer kinds and their forward/backward kernels.
//!
//! Activations are unbatched. Convolutions take `(channels, height, width)`
//! tensors, use 3x3 kernels with one pixel of zero padding, and have no bias.
//! Dense layers take a flat vector and also carry no bias.

use rand::Rng;

use super::{NdiffError, Tensor};

/// Norm floor added under the square root of [`Layer::L2Normalize`].
pub const L2_EPSILON: f64 = 1e-12;

pub const KERNEL: usize = 3;
const PAD: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Relu,
    GlobalMaxPool,
    Dense,
    L2Normalize,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::GlobalMaxPool => "global_max_pool",
            LayerKind::Dense => "dense",
            LayerKind::L2Normalize => "l2_normalize",
        }
    }
}

/// A layer together with the parameters it owns.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Weight shape `(out_channels, in_channels, 3, 3)`.
    Conv2d { weight: Tensor, stride: usize },
    Relu,
    GlobalMaxPool,
    /// Weight shape `(out_dim, in_dim)`.
    Dense { weight: Tensor },
    L2Normalize,
}

/// Whatever a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    /// Flat argmax index per channel plus the pooled input's shape.
    Pool { argmax: Vec<usize>, shape: Vec<usize> },
    Normalize { input: Vec<f64>, norm: f64 },
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl Layer {
    pub fn conv2d(
        rng: &mut impl Rng,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        let area = KERNEL * KERNEL;
        let bound = glorot_bound(in_channels * area, out_channels * area);
        let n = out_channels * in_channels * area;
        let weight = Tensor::new(
            vec![out_channels, in_channels, KERNEL, KERNEL],
            uniform(rng, n, bound),
        )
        .expect("conv2d extents are positive");
        Layer::Conv2d { weight, stride }
    }

    pub fn dense(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Self {
        let bound = glorot_bound(in_dim, out_dim);
        let weight = Tensor::new(vec![out_dim, in_dim], uniform(rng, out_dim * in_dim, bound))
            .expect("dense extents are positive");
        Layer::Dense { weight }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::GlobalMaxPool => LayerKind::GlobalMaxPool,
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::L2Normalize => LayerKind::L2Normalize,
        }
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Conv2d { weight, .. } | Layer::Dense { weight } => Some(weight),
            _ => None,
        }
    }

    pub fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Conv2d { weight, .. } | Layer::Dense { weight } => Some(weight),
            _ => None,
        }
    }

    /// Output shape for an input of `shape`, or the expected input shape on
    /// mismatch. `index` is only used to label the error.
    pub fn output_shape(&self, index: usize, shape: &[usize]) -> Result<Vec<usize>, NdiffError> {
        let mismatch = |expected: Vec<usize>| NdiffError::ShapeMismatch {
            layer: index,
            kind: self.kind().name(),
            expected,
            actual: shape.to_vec(),
        };
        match self {
            Layer::Conv2d { weight, stride } => {
                let (oc, ic) = (weight.shape()[0], weight.shape()[1]);
                if shape.len() != 3 || shape[0] != ic {
                    return Err(mismatch(vec![ic, 0, 0]));
                }
                Ok(vec![oc, conv_extent(shape[1], *stride), conv_extent(shape[2], *stride)])
            }
            Layer::Relu => Ok(shape.to_vec()),
            Layer::GlobalMaxPool => {
                if shape.len() != 3 {
                    return Err(mismatch(vec![0, 0, 0]));
                }
                Ok(vec![shape[0]])
            }
            Layer::Dense { weight } => {
                let (od, id) = (weight.shape()[0], weight.shape()[1]);
                if shape.len() != 1 || shape[0] != id {
                    return Err(mismatch(vec![id]));
                }
                Ok(vec![od])
            }
            Layer::L2Normalize => {
                if shape.len() != 1 {
                    return Err(mismatch(vec![0]));
                }
                Ok(shape.to_vec())
            }
        }
    }

    pub(crate) fn forward(&self, index: usize, x: &Tensor) -> Result<(Tensor, Cache), NdiffError> {
        let out_shape = self.output_shape(index, x.shape())?;
        let out = match self {
            Layer::Conv2d { weight, stride } => conv_forward(weight, *stride, x, &out_shape),
            Layer::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
            Layer::GlobalMaxPool => {
                let argmax = channel_argmax(x);
                let out = argmax.iter().map(|&i| x.data()[i]).collect();
                let cache = Cache::Pool {
                    argmax,
                    shape: x.shape().to_vec(),
                };
                return Ok((Tensor::new(out_shape, out)?, cache));
            }
            Layer::Dense { weight } => {
                let id = weight.shape()[1];
                weight
                    .data()
                    .chunks_exact(id)
                    .map(|row| dot(row, x.data()))
                    .collect()
            }
            Layer::L2Normalize => {
                let norm = (dot(x.data(), x.data()) + L2_EPSILON).sqrt();
                let out = x.data().iter().map(|v| v / norm).collect();
                let cache = Cache::Normalize {
                    input: x.data().to_vec(),
                    norm,
                };
                return Ok((Tensor::new(out_shape, out)?, cache));
            }
        };
        Ok((Tensor::new(out_shape, out)?, Cache::Input(x.clone())))
    }

    /// Returns the input gradient and, for parameterized layers, the weight
    /// gradient.
    pub(crate) fn backward(&self, cache: &Cache, grad_out: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        match (self, cache) {
            (Layer::Conv2d { weight, stride }, Cache::Input(x)) => {
                let (gx, gw) = conv_backward(weight, *stride, x, grad_out);
                (gx, Some(gw))
            }
            (Layer::Relu, Cache::Input(x)) => {
                let gx = x
                    .data()
                    .iter()
                    .zip(grad_out)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                (gx, None)
            }
            (Layer::GlobalMaxPool, Cache::Pool { argmax, shape }) => {
                let mut gx = vec![0.0; shape.iter().product()];
                for (&i, &g) in argmax.iter().zip(grad_out) {
                    gx[i] += g;
                }
                (gx, None)
            }
            (Layer::Dense { weight }, Cache::Input(x)) => {
                let (od, id) = (weight.shape()[0], weight.shape()[1]);
                let mut gx = vec![0.0; id];
                let mut gw = vec![0.0; od * id];
                for (o, &g) in grad_out.iter().enumerate() {
                    let row = &weight.data()[o * id..(o + 1) * id];
                    for k in 0..id {
                        gw[o * id + k] = g * x.data()[k];
                        gx[k] += g * row[k];
                    }
                }
                (gx, Some(gw))
            }
            (Layer::L2Normalize, Cache::Normalize { input, norm }) => {
                // d(x/n)/dx = I/n - x x^T / n^3
                let proj = dot(input, grad_out) / (norm * norm * norm);
                let gx = input
                    .iter()
                    .zip(grad_out)
                    .map(|(&x, &g)| g / norm - x * proj)
                    .collect();
                (gx, None)
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (v, &u) in y.iter_mut().zip(x) {
        *v += a * u;
    }
}

pub(crate) fn conv_extent(n: usize, stride: usize) -> usize {
    (n + 2 * PAD - KERNEL) / stride + 1
}

/// Per-channel flat index of the maximum of a `(C, H, W)` tensor. Ties go
/// to the first index in row-major order, i.e. smallest row then column.
pub(crate) fn channel_argmax(x: &Tensor) -> Vec<usize> {
    let plane = x.shape()[1] * x.shape()[2];
    x.data()
        .chunks_exact(plane)
        .enumerate()
        .map(|(c, values)| {
            let mut best = 0;
            for (i, &v) in values.iter().enumerate() {
                if v > values[best] {
                    best = i;
                }
            }
            c * plane + best
        })
        .collect()
}

/// Output positions `lo..hi` along one axis whose tap `k` lands inside `0..n`,
/// and the input coordinate of position `lo`.
fn tap_range(k: usize, stride: usize, n: usize, n_out: usize) -> (usize, usize, usize) {
    let lo = PAD.saturating_sub(k).div_ceil(stride);
    let hi = ((n + PAD - k).div_ceil(stride)).min(n_out);
    (lo, hi.max(lo), lo * stride + k - PAD)
}

/// Patch matrix of shape `(in_channels * 9, out_h * out_w)`; padded taps stay zero.
fn im2col(x: &Tensor, stride: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (ic, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xd = x.data();
    let p = oh * ow;
    let mut col = vec![0.0; ic * KERNEL * KERNEL * p];
    for c in 0..ic {
        let xc = &xd[c * h * w..(c + 1) * h * w];
        for kh in 0..KERNEL {
            let (i0, i1, r0) = tap_range(kh, stride, h, oh);
            for kw in 0..KERNEL {
                let (j0, j1, q0) = tap_range(kw, stride, w, ow);
                let row = &mut col[((c * KERNEL + kh) * KERNEL + kw) * p..][..p];
                for (di, i) in (i0..i1).enumerate() {
                    let xrow = &xc[(r0 + di * stride) * w + q0..];
                    for (dj, v) in row[i * ow + j0..i * ow + j1].iter_mut().enumerate() {
                        *v = xrow[dj * stride];
                    }
                }
            }
        }
    }
    col
}

/// Adds the patch-matrix gradient back onto the input positions it was read from.
fn col2im(gcol: &[f64], stride: usize, shape: &[usize], oh: usize, ow: usize) -> Vec<f64> {
    let (ic, h, w) = (shape[0], shape[1], shape[2]);
    let p = oh * ow;
    let mut gx = vec![0.0; ic * h * w];
    for c in 0..ic {
        let gxc = &mut gx[c * h * w..(c + 1) * h * w];
        for kh in 0..KERNEL {
            let (i0, i1, r0) = tap_range(kh, stride, h, oh);
            for kw in 0..KERNEL {
                let (j0, j1, q0) = tap_range(kw, stride, w, ow);
                let row = &gcol[((c * KERNEL + kh) * KERNEL + kw) * p..][..p];
                for (di, i) in (i0..i1).enumerate() {
                    let base = (r0 + di * stride) * w + q0;
                    for (dj, &g) in row[i * ow + j0..i * ow + j1].iter().enumerate() {
                        gxc[base + dj * stride] += g;
                    }
                }
            }
        }
    }
    gx
}

fn conv_forward(weight: &Tensor, stride: usize, x: &Tensor, out_shape: &[usize]) -> Vec<f64> {
    let oc = weight.shape()[0];
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let p = oh * ow;
    let col = im2col(x, stride, oh, ow);
    let k = col.len() / p;
    let mut out = vec![0.0; oc * p];
    for (o, plane) in out.chunks_exact_mut(p).enumerate() {
        for (&wv, row) in weight.data()[o * k..(o + 1) * k].iter().zip(col.chunks_exact(p)) {
            axpy(plane, wv, row);
        }
    }
    out
}

fn conv_backward(weight: &Tensor, stride: usize, x: &Tensor, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow) = (conv_extent(x.shape()[1], stride), conv_extent(x.shape()[2], stride));
    let p = oh * ow;
    let col = im2col(x, stride, oh, ow);
    let k = col.len() / p;
    let wd = weight.data();
    let mut gw = vec![0.0; wd.len()];
    let mut gcol = vec![0.0; col.len()];
    for (o, g) in grad_out.chunks_exact(p).enumerate() {
        for (kk, (row, grow)) in col.chunks_exact(p).zip(gcol.chunks_exact_mut(p)).enumerate() {
            gw[o * k + kk] = dot(g, row);
            axpy(grow, wd[o * k + kk], g);
        }
    }
    (col2im(&gcol, stride, x.shape(), oh, ow), gw)
}
