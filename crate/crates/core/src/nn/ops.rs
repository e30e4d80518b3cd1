//! Forward and backward kernels for every layer type.
//!
//! Images and feature maps are `[channels, height, width]` tensors. The
//! backward functions take the forward-pass values they need explicitly;
//! [`crate::nn::network`] owns the caching.

use std::ops::Range;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding: output extent `H - k + 1` at stride 1.
    Valid,
    /// Zero padding so that stride 1 preserves the extent. Even kernels pad
    /// one more row/column after than before.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Output extent and leading pad for one spatial axis, or `None` when no
/// full window fits.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    let (total_pad, before) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (kernel - 1, (kernel - 1) / 2),
    };
    let padded = input + total_pad;
    if padded < kernel {
        return None;
    }
    Some(((padded - kernel) / stride + 1, before))
}

/// Output positions `o` in `0..n_out` for which `o * stride + offset` lands
/// inside `0..n_in`.
fn in_bounds(n_out: usize, n_in: usize, offset: isize, stride: usize) -> Range<usize> {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let last = n_in as isize - 1 - offset;
    if last < 0 {
        return 0..0;
    }
    let hi = ((last / s) + 1).min(n_out as isize);
    (lo as usize)..(hi.max(lo) as usize)
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::Shape(format!("{what} must be [C,H,W], got {s:?}"))),
    }
}

struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    ho: usize,
    wo: usize,
    pad_y: usize,
    pad_x: usize,
}

fn conv_geometry(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Result<ConvGeometry> {
    let (c_in, h, w) = dims3(input, "conv input")?;
    let (c_out, wc_in, k) = match *weights.shape() {
        [co, ci, kh, kw] if kh == kw => (co, ci, kh),
        ref s => {
            return Err(Error::Shape(format!(
                "conv weights must be [C_out,C_in,k,k], got {s:?}"
            )))
        }
    };
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv input {:?} has {c_in} channels but weights {:?} expect {wc_in}",
            input.shape(),
            weights.shape()
        )));
    }
    if bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv bias {:?} does not match weights {:?}",
            bias.shape(),
            weights.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv stride must be >= 1".into()));
    }
    let too_small = || {
        Error::Shape(format!(
            "conv input {:?} too small for {k}x{k} kernel ({padding:?} padding)",
            input.shape()
        ))
    };
    let (ho, pad_y) = conv_extent(h, k, stride, padding).ok_or_else(too_small)?;
    let (wo, pad_x) = conv_extent(w, k, stride, padding).ok_or_else(too_small)?;
    Ok(ConvGeometry {
        c_in,
        h,
        w,
        c_out,
        k,
        ho,
        wo,
        pad_y,
        pad_x,
    })
}

/// 2-D cross-correlation (no kernel flip) plus a per-channel bias.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let g = conv_geometry(input, weights, bias, stride, padding)?;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; g.c_out * g.ho * g.wo];
    for co in 0..g.c_out {
        let plane = &mut out[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
        plane.fill(bias.data()[co]);
        for ci in 0..g.c_in {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                let oy_range = in_bounds(g.ho, g.h, ky as isize - g.pad_y as isize, stride);
                for kx in 0..g.k {
                    let wv = wt[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                    let ox_range = in_bounds(g.wo, g.w, kx as isize - g.pad_x as isize, stride);
                    for oy in oy_range.clone() {
                        let iy = oy * stride + ky - g.pad_y;
                        let row = &src[iy * g.w..(iy + 1) * g.w];
                        let dst = &mut plane[oy * g.wo..(oy + 1) * g.wo];
                        for ox in ox_range.clone() {
                            dst[ox] += wv * row[ox * stride + kx - g.pad_x];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.c_out, g.ho, g.wo], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, weights, bias, stride, padding)?;
    if grad_out.shape() != [g.c_out, g.ho, g.wo] {
        return Err(Error::Shape(format!(
            "conv grad_out {:?} does not match forward output {:?}",
            grad_out.shape(),
            [g.c_out, g.ho, g.wo]
        )));
    }
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        let gplane = &go[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
        gb[co] = gplane.iter().sum();
        for ci in 0..g.c_in {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            let gsrc = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.k {
                let oy_range = in_bounds(g.ho, g.h, ky as isize - g.pad_y as isize, stride);
                for kx in 0..g.k {
                    let widx = ((co * g.c_in + ci) * g.k + ky) * g.k + kx;
                    let wv = wt[widx];
                    let ox_range = in_bounds(g.wo, g.w, kx as isize - g.pad_x as isize, stride);
                    let mut acc = 0.0;
                    for oy in oy_range.clone() {
                        let iy = oy * stride + ky - g.pad_y;
                        let grow = &gplane[oy * g.wo..(oy + 1) * g.wo];
                        for ox in ox_range.clone() {
                            let ix = ox * stride + kx - g.pad_x;
                            acc += grow[ox] * src[iy * g.w + ix];
                            gsrc[iy * g.w + ix] += wv * grow[ox];
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.c_out], gb)?,
    })
}

/// Pooling bookkeeping kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolCache {
    /// Flat input index of each output's window maximum.
    Max { input_shape: Vec<usize>, argmax: Vec<usize> },
    Mean { input_shape: Vec<usize>, window: usize },
}

pub fn pool_extent(input: usize, window: usize) -> Option<usize> {
    if window == 0 || input < window {
        None
    } else {
        Some(input / window)
    }
}

/// Non-overlapping `s x s` pooling; rows/columns not covered by a full
/// window are dropped.
pub fn pool2d_forward(input: &Tensor, window: usize, mode: PoolMode) -> Result<(Tensor, PoolCache)> {
    let (c, h, w) = dims3(input, "pool input")?;
    let err = || {
        Error::Shape(format!(
            "pool window {window} does not fit input {:?}",
            input.shape()
        ))
    };
    let ho = pool_extent(h, window).ok_or_else(err)?;
    let wo = pool_extent(w, window).ok_or_else(err)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::new();
    let area = (window * window) as f64;
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                match mode {
                    PoolMode::Max => {
                        let mut best = base + oy * window * w + ox * window;
                        for m in 0..window {
                            for n in 0..window {
                                let idx = base + (oy * window + m) * w + ox * window + n;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        argmax.push(best);
                        out.push(x[best]);
                    }
                    PoolMode::Mean => {
                        let mut s = 0.0;
                        for m in 0..window {
                            for n in 0..window {
                                s += x[base + (oy * window + m) * w + ox * window + n];
                            }
                        }
                        out.push(s / area);
                    }
                }
            }
        }
    }
    let cache = match mode {
        PoolMode::Max => PoolCache::Max {
            input_shape: input.shape().to_vec(),
            argmax,
        },
        PoolMode::Mean => PoolCache::Mean {
            input_shape: input.shape().to_vec(),
            window,
        },
    };
    Ok((Tensor::new(vec![c, ho, wo], out)?, cache))
}

pub fn pool2d_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    match cache {
        PoolCache::Max { input_shape, argmax } => {
            if grad_out.len() != argmax.len() {
                return Err(Error::Shape(format!(
                    "pool grad_out {:?} does not match {} cached positions",
                    grad_out.shape(),
                    argmax.len()
                )));
            }
            let mut gx = Tensor::zeros(input_shape);
            let d = gx.data_mut();
            for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
                d[idx] += g;
            }
            Ok(gx)
        }
        PoolCache::Mean { input_shape, window } => {
            let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
            let (ho, wo) = (h / window, w / window);
            if grad_out.shape() != [c, ho, wo] {
                return Err(Error::Shape(format!(
                    "pool grad_out {:?} does not match forward output {:?}",
                    grad_out.shape(),
                    [c, ho, wo]
                )));
            }
            let area = (window * window) as f64;
            let mut gx = Tensor::zeros(input_shape);
            let d = gx.data_mut();
            let go = grad_out.data();
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = go[(ch * ho + oy) * wo + ox] / area;
                        for m in 0..*window {
                            for n in 0..*window {
                                d[ch * h * w + (oy * window + m) * w + ox * window + n] += g;
                            }
                        }
                    }
                }
            }
            Ok(gx)
        }
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    grad_out.check_same_shape(input)?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Channel-major linearization: element `(i, y, x)` lands at `i*H*W + y*W + x`.
pub fn flatten_forward(input: &Tensor) -> Tensor {
    Tensor::from_vec(input.data().to_vec())
}

pub fn unflatten(flat: &Tensor, shape: &[usize]) -> Result<Tensor> {
    Tensor::new(shape.to_vec(), flat.data().to_vec())
}

/// The textbook concatenation index `j = i*C^2 + (y-1)*C + x` for a square
/// `C x C` map, kept verbatim (1-based row term, unshifted column and
/// channel). [`flatten_forward`] does not use it.
pub fn flatten_index(channel: i64, x: i64, y: i64, side: i64) -> i64 {
    channel * side * side + (y - 1) * side + x
}

/// `W x + b` for `W: [m, n]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let out = (0..m)
        .map(|i| {
            let row = &w[i * n..(i + 1) * n];
            bias.data()[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Tensor::new(vec![m], out)
}

fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (m, n) = match *weights.shape() {
        [m, n] => (m, n),
        ref s => return Err(Error::Shape(format!("dense weights must be [m,n], got {s:?}"))),
    };
    if input.len() != n {
        return Err(Error::Shape(format!(
            "dense input {:?} does not match weights {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::Shape(format!(
            "dense bias {:?} does not match weights {:?}",
            bias.shape(),
            weights.shape()
        )));
    }
    Ok((m, n))
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Returns `(Wᵀ g, g ⊗ x, g)`.
pub fn dense_backward(grad_out: &Tensor, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<DenseGrads> {
    let (m, n) = dense_dims(input, weights, bias)?;
    if grad_out.len() != m {
        return Err(Error::Shape(format!(
            "dense grad_out {:?} does not match output [{m}]",
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let x = input.data();
    let w = weights.data();
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; m * n];
    for i in 0..m {
        let gi = g[i];
        let row = &w[i * n..(i + 1) * n];
        let grow = &mut gw[i * n..(i + 1) * n];
        for j in 0..n {
            gx[j] += row[j] * gi;
            grow[j] = gi * x[j];
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(vec![m, n], gw)?,
        bias: Tensor::new(vec![m], g.to_vec())?,
    })
}

/// Inverted dropout. In the train phase each element is zeroed with
/// probability `p` and survivors are scaled by `1/(1-p)`; the returned mask
/// holds the per-element multiplier. The infer phase is the identity.
pub fn dropout_forward<R: Rng + ?Sized>(
    input: &Tensor,
    p: f64,
    rng: &mut R,
    phase: Phase,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    if phase == Phase::Infer || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let draws = (0..input.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = Tensor::new(input.shape().to_vec(), draws)?;
    let out = apply_mask(input, &mask)?;
    Ok((out, Some(mask)))
}

pub fn apply_mask(t: &Tensor, mask: &Tensor) -> Result<Tensor> {
    t.check_same_shape(mask)?;
    let data = t.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Tensor::new(t.shape().to_vec(), data)
}

/// Backward of dropout: identity when no mask was drawn.
pub fn dropout_backward(grad_out: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    match mask {
        Some(m) => apply_mask(grad_out, m),
        None => Ok(grad_out.clone()),
    }
}

/// Max-shifted softmax over all elements.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(logits.shape().to_vec(), exps.into_iter().map(|e| e / total).collect())
        .expect("shape preserved")
}

/// Jacobian-vector product of softmax given its output `p`:
/// `p ⊙ (g - <g, p>)`.
pub fn softmax_backward(grad_out: &Tensor, output: &Tensor) -> Result<Tensor> {
    grad_out.check_same_shape(output)?;
    let dot: f64 = grad_out.data().iter().zip(output.data()).map(|(g, p)| g * p).sum();
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(g, p)| p * (g - dot))
        .collect();
    Tensor::new(output.shape().to_vec(), data)
}
