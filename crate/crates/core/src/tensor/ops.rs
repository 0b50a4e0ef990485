//! Forward operations on [`Tensor`] values and the adjoint kernels the tape
//! replays during the backward pass.

use serde::{Deserialize, Serialize};

use super::kernels::{self, axis_split, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Epsilon added to variances in layer and batch normalization.
pub const NORM_EPS: f32 = 1e-5;

/// Running statistics decay: `running = momentum * running + (1 - momentum) * batch`.
pub const BN_MOMENTUM: f32 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Infer,
}

/// Per-slice mean and reciprocal standard deviation saved for the adjoint.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NormStats {
    pub mean: Vec<f32>,
    pub rstd: Vec<f32>,
}

fn check_axis(op: &'static str, x: &Tensor, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::AxisOutOfRange {
            op,
            axis,
            rank: x.rank(),
        });
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

// ---------------------------------------------------------------- convolution

pub(crate) fn conv_geom(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be at least 1"));
    }
    let g = ConvGeom::new(x.shape(), w.shape(), stride, padding)
        .ok_or_else(|| Error::shape("conv2d", x.shape(), w.shape()))?;
    if b.shape() != [g.cout] {
        return Err(Error::shape("conv2d", w.shape(), b.shape()));
    }
    Ok(g)
}

/// 2-D convolution of an NHWC input with a `[kh, kw, c_in, c_out]` kernel.
///
/// `Same` padding follows the usual `ceil(in / stride)` output size with the
/// odd padding pixel placed after the data.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let g = conv_geom(x, w, b, stride, padding)?;
    let out = kernels::conv2d_forward(x.data(), w.data(), b.data(), &g);
    Ok(Tensor::from_parts(vec![g.n, g.ho, g.wo, g.cout], out))
}

// ---------------------------------------------------------------- matmul

/// Shape bookkeeping for `[.., m, k] x [k, n]` or batched `[.., m, k] x [.., k, n]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub shared_rhs: bool,
}

pub(crate) fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<MatmulDims> {
    let err = || Error::shape("matmul", a.shape(), b.shape());
    if a.rank() < 2 || b.rank() < 2 {
        return Err(err());
    }
    let (ar, br) = (a.rank(), b.rank());
    let (m, k) = (a.dim(ar - 2), a.dim(ar - 1));
    let (bk, n) = (b.dim(br - 2), b.dim(br - 1));
    if k != bk {
        return Err(err());
    }
    let batch: usize = a.shape()[..ar - 2].iter().product();
    let shared_rhs = br == 2;
    if !shared_rhs && a.shape()[..ar - 2] != b.shape()[..br - 2] {
        return Err(err());
    }
    Ok(MatmulDims {
        batch,
        m,
        k,
        n,
        shared_rhs,
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a, b)?;
    let mut out = vec![0.0f32; d.batch * d.m * d.n];
    if d.shared_rhs {
        kernels::gemm(d.batch * d.m, d.k, d.n, a.data(), false, b.data(), false, &mut out, 0.0);
    } else {
        for i in 0..d.batch {
            kernels::gemm(
                d.m,
                d.k,
                d.n,
                &a.data()[i * d.m * d.k..],
                false,
                &b.data()[i * d.k * d.n..],
                false,
                &mut out[i * d.m * d.n..],
                0.0,
            );
        }
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = d.n;
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn matmul_backward(
    a: &Tensor,
    b: &Tensor,
    dy: &Tensor,
    need_da: bool,
    need_db: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let d = matmul_dims(a, b).expect("validated in forward");
    let da = need_da.then(|| {
        let mut da = vec![0.0f32; a.len()];
        if d.shared_rhs {
            kernels::gemm(d.batch * d.m, d.n, d.k, dy.data(), false, b.data(), true, &mut da, 0.0);
        } else {
            for i in 0..d.batch {
                kernels::gemm(
                    d.m,
                    d.n,
                    d.k,
                    &dy.data()[i * d.m * d.n..],
                    false,
                    &b.data()[i * d.k * d.n..],
                    true,
                    &mut da[i * d.m * d.k..],
                    0.0,
                );
            }
        }
        Tensor::from_parts(a.shape().to_vec(), da)
    });
    let db = need_db.then(|| {
        let mut db = vec![0.0f32; b.len()];
        if d.shared_rhs {
            kernels::gemm(d.k, d.batch * d.m, d.n, a.data(), true, dy.data(), false, &mut db, 0.0);
        } else {
            for i in 0..d.batch {
                kernels::gemm(
                    d.k,
                    d.m,
                    d.n,
                    &a.data()[i * d.m * d.k..],
                    true,
                    &dy.data()[i * d.m * d.n..],
                    false,
                    &mut db[i * d.k * d.n..],
                    0.0,
                );
            }
        }
        Tensor::from_parts(b.shape().to_vec(), db)
    });
    (da, db)
}

// ---------------------------------------------------------------- elementwise

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

/// Adds a bias vector along the last axis.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().ok_or_else(|| Error::shape("add_bias", x.shape(), bias.shape()))?;
    if bias.shape() != [c] {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn scalar_mul(x: &Tensor, s: f32) -> Tensor {
    x.map(|v| v * s)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub(crate) fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// `x * sigmoid(x)`.
pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid_scalar(v))
}

// ---------------------------------------------------------------- softmax

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis("softmax", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0f32; x.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let max = (0..len).map(|i| src[at(i)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for i in 0..len {
                let e = (src[at(i)] - max).exp();
                out[at(i)] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for i in 0..len {
                out[at(i)] *= inv;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub(crate) fn softmax_backward(y: &Tensor, dy: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let (yv, gv) = (y.data(), dy.data());
    let mut dx = vec![0.0f32; y.len()];
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let dot: f32 = (0..len).map(|i| yv[at(i)] * gv[at(i)]).sum();
            for i in 0..len {
                dx[at(i)] = yv[at(i)] * (gv[at(i)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

// ---------------------------------------------------------------- normalization

/// Normalizes each slice along `axis` to zero mean and unit variance, then
/// applies `gain` and `bias` (both of length `shape[axis]`).
pub fn layer_norm(x: &Tensor, axis: usize, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    layer_norm_with_stats(x, axis, gain, bias).map(|(y, _)| y)
}

pub(crate) fn layer_norm_with_stats(
    x: &Tensor,
    axis: usize,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, NormStats)> {
    check_axis("layer_norm", x, axis)?;
    let (outer, len, inner) = axis_split(x.shape(), axis);
    if gain.shape() != [len] || bias.shape() != [len] {
        return Err(Error::shape("layer_norm", x.shape(), gain.shape()));
    }
    let src = x.data();
    let mut out = vec![0.0f32; x.len()];
    let mut stats = NormStats {
        mean: Vec::with_capacity(outer * inner),
        rstd: Vec::with_capacity(outer * inner),
    };
    for o in 0..outer {
        for j in 0..inner {
            let at = |i: usize| (o * len + i) * inner + j;
            let mean = (0..len).map(|i| src[at(i)] as f64).sum::<f64>() / len as f64;
            let var = (0..len)
                .map(|i| {
                    let d = src[at(i)] as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / len as f64;
            let rstd = 1.0 / (var + NORM_EPS as f64).sqrt();
            for i in 0..len {
                let xhat = ((src[at(i)] as f64 - mean) * rstd) as f32;
                out[at(i)] = xhat * gain.data()[i] + bias.data()[i];
            }
            stats.mean.push(mean as f32);
            stats.rstd.push(rstd as f32);
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), out), stats))
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward(
    x: &Tensor,
    axis: usize,
    gain: &Tensor,
    stats: &NormStats,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (outer, len, inner) = axis_split(x.shape(), axis);
    let (xv, gv) = (x.data(), dy.data());
    let mut dx = vec![0.0f32; x.len()];
    let mut dgain = vec![0.0f32; len];
    let mut dbias = vec![0.0f32; len];
    let mut xhat = vec![0.0f32; len];
    let mut dxhat = vec![0.0f32; len];
    for o in 0..outer {
        for j in 0..inner {
            let s = o * inner + j;
            let (mean, rstd) = (stats.mean[s], stats.rstd[s]);
            let at = |i: usize| (o * len + i) * inner + j;
            let (mut sum_d, mut sum_dx) = (0.0f64, 0.0f64);
            for i in 0..len {
                xhat[i] = (xv[at(i)] - mean) * rstd;
                dxhat[i] = gv[at(i)] * gain.data()[i];
                dgain[i] += gv[at(i)] * xhat[i];
                dbias[i] += gv[at(i)];
                sum_d += dxhat[i] as f64;
                sum_dx += (dxhat[i] * xhat[i]) as f64;
            }
            let n = len as f64;
            for i in 0..len {
                let v = (n * dxhat[i] as f64 - sum_d - xhat[i] as f64 * sum_dx) * rstd as f64 / n;
                dx[at(i)] = v as f32;
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(vec![len], dgain),
        Tensor::from_parts(vec![len], dbias),
    )
}

/// Running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
        }
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update(&mut self, batch_mean: &[f32], batch_var: &[f32]) {
        let keep = BN_MOMENTUM;
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(batch_mean) {
            *r = keep * *r + (1.0 - keep) * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(batch_var) {
            *r = keep * *r + (1.0 - keep) * v;
        }
    }
}

/// Per-channel (last axis) batch mean and biased variance.
pub(crate) fn channel_moments(x: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let c = *x.shape().last().unwrap();
    let rows = x.len() / c;
    let mut sum = vec![0.0f64; c];
    for row in x.data().chunks_exact(c) {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += *v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / rows as f64).collect();
    let mut sq = vec![0.0f64; c];
    for row in x.data().chunks_exact(c) {
        for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
            let d = *v as f64 - m;
            *s += d * d;
        }
    }
    (
        mean.iter().map(|&m| m as f32).collect(),
        sq.iter().map(|s| (s / rows as f64) as f32).collect(),
    )
}

fn check_bn(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<usize> {
    let c = *x.shape().last().ok_or_else(|| Error::shape("batch_norm", x.shape(), gain.shape()))?;
    if gain.shape() != [c] || bias.shape() != [c] {
        return Err(Error::shape("batch_norm", x.shape(), gain.shape()));
    }
    Ok(c)
}

/// Normalizes with the given per-channel mean/variance and applies the affine map.
pub(crate) fn batch_norm_apply(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    mean: &[f32],
    var: &[f32],
) -> (Tensor, NormStats) {
    let c = gain.len();
    let rstd: Vec<f32> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        for ch in 0..c {
            row[ch] = (row[ch] - mean[ch]) * rstd[ch] * gain.data()[ch] + bias.data()[ch];
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), out),
        NormStats {
            mean: mean.to_vec(),
            rstd,
        },
    )
}

/// Batch normalization over every axis but the last.
///
/// In `Train` mode the batch statistics normalize the input and are folded
/// into `state` with momentum [`BN_MOMENTUM`]; in `Infer` mode the running
/// statistics are used and `state` is left untouched.
pub fn batch_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    state: &mut BatchNormState,
    mode: NormMode,
) -> Result<Tensor> {
    check_bn(x, gain, bias)?;
    match mode {
        NormMode::Train => {
            let (mean, var) = channel_moments(x);
            state.update(&mean, &var);
            Ok(batch_norm_apply(x, gain, bias, &mean, &var).0)
        }
        NormMode::Infer => Ok(batch_norm_apply(
            x,
            gain,
            bias,
            state.running_mean.data(),
            state.running_var.data(),
        )
        .0),
    }
}

pub(crate) fn batch_norm_check(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<usize> {
    check_bn(x, gain, bias)
}

/// Returns `(dx, dgain, dbias)`. With `batch_stats` the mean and variance
/// depend on `x`; otherwise they are constants.
pub(crate) fn batch_norm_backward(
    x: &Tensor,
    gain: &Tensor,
    stats: &NormStats,
    dy: &Tensor,
    batch_stats: bool,
) -> (Tensor, Tensor, Tensor) {
    let c = gain.len();
    let rows = x.len() / c;
    let mut dgain = vec![0.0f64; c];
    let mut dbias = vec![0.0f64; c];
    for (xr, gr) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for ch in 0..c {
            let xhat = (xr[ch] - stats.mean[ch]) * stats.rstd[ch];
            dgain[ch] += (gr[ch] * xhat) as f64;
            dbias[ch] += gr[ch] as f64;
        }
    }
    let mut dx = vec![0.0f32; x.len()];
    let n = rows as f64;
    for ((dr, xr), gr) in dx
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(c))
        .zip(dy.data().chunks_exact(c))
    {
        for ch in 0..c {
            let g = gain.data()[ch] as f64;
            let rstd = stats.rstd[ch] as f64;
            dr[ch] = if batch_stats {
                let xhat = ((xr[ch] - stats.mean[ch]) * stats.rstd[ch]) as f64;
                (g * rstd / n * (n * gr[ch] as f64 - dbias[ch] - xhat * dgain[ch])) as f32
            } else {
                (gr[ch] as f64 * g * rstd) as f32
            };
        }
    }
    let to32 = |v: Vec<f64>| Tensor::from_parts(vec![c], v.into_iter().map(|x| x as f32).collect());
    (Tensor::from_parts(x.shape().to_vec(), dx), to32(dgain), to32(dbias))
}

// ---------------------------------------------------------------- concat

pub fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
    check_axis("concat", first, axis)?;
    for t in &inputs[1..] {
        let ok = t.rank() == first.rank()
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::shape("concat", first.shape(), t.shape()));
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let total: usize = inputs.iter().map(|t| t.dim(axis)).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in inputs {
            let block = t.dim(axis) * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

pub(crate) fn concat_backward(shapes: &[Vec<usize>], axis: usize, dy: &Tensor) -> Vec<Tensor> {
    let (outer, _, inner) = axis_split(dy.shape(), axis);
    let mut parts: Vec<Vec<f32>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    let mut pos = 0;
    for _ in 0..outer {
        for (part, shape) in parts.iter_mut().zip(shapes) {
            let block = shape[axis] * inner;
            part.extend_from_slice(&dy.data()[pos..pos + block]);
            pos += block;
        }
    }
    parts
        .into_iter()
        .zip(shapes)
        .map(|(p, s)| Tensor::from_parts(s.clone(), p))
        .collect()
}

// ---------------------------------------------------------------- resampling

fn nhwc(op: &'static str, x: &Tensor) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, h, w, c] => Ok([n, h, w, c]),
        _ => Err(Error::invalid(op, format!("expected an NHWC tensor, got shape {:?}", x.shape()))),
    }
}

/// Bilinear upsampling by an integer factor with half-pixel centres:
/// output pixel `o` samples input coordinate `(o + 0.5) / factor - 0.5`,
/// clamped to the valid range.
pub fn bilinear_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 {
        return Err(Error::invalid("bilinear_upsample", format!("factor must be >= 2, got {factor}")));
    }
    let [n, h, w, c] = nhwc("bilinear_upsample", x)?;
    let out = kernels::resize_bilinear(x.data(), n, h, w, c, h * factor, w * factor);
    Ok(Tensor::from_parts(vec![n, h * factor, w * factor, c], out))
}

pub(crate) fn bilinear_upsample_backward(x_shape: &[usize], factor: usize, dy: &Tensor) -> Tensor {
    let [n, h, w, c] = [x_shape[0], x_shape[1], x_shape[2], x_shape[3]];
    let dx = kernels::resize_bilinear_backward(dy.data(), n, h, w, c, h * factor, w * factor);
    Tensor::from_parts(x_shape.to_vec(), dx)
}

// ---------------------------------------------------------------- unfold / fold

pub(crate) fn unfold_check(x: &Tensor, patch: usize) -> Result<[usize; 4]> {
    let [n, h, w, c] = nhwc("unfold", x)?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(
            "unfold",
            format!("spatial size {h}x{w} is not divisible by patch {patch}"),
        ));
    }
    Ok([n, h, w, c])
}

/// Rearranges `[n, h, w, c]` into `n * patch²` token sequences of length
/// `(h / patch) * (w / patch)`: sequence `s` collects the pixels sharing the
/// intra-patch offset `(s / patch, s % patch)`.
pub fn unfold(x: &Tensor, patch: usize) -> Result<Tensor> {
    let [n, h, w, c] = unfold_check(x, patch)?;
    let perm = kernels::unfold_perm(n, h, w, c, patch);
    let data = perm.iter().map(|&i| x.data()[i]).collect();
    Ok(Tensor::from_parts(
        vec![n * patch * patch, (h / patch) * (w / patch), c],
        data,
    ))
}

/// Inverse of [`unfold`]; `shape` is the original `[n, h, w, c]`.
pub fn fold(seq: &Tensor, patch: usize, shape: [usize; 4]) -> Result<Tensor> {
    let [n, h, w, c] = shape;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(
            "fold",
            format!("spatial size {h}x{w} is not divisible by patch {patch}"),
        ));
    }
    let expected = [n * patch * patch, (h / patch) * (w / patch), c];
    if seq.shape() != expected {
        return Err(Error::shape("fold", seq.shape(), &expected));
    }
    let perm = kernels::unfold_perm(n, h, w, c, patch);
    let mut out = vec![0.0f32; seq.len()];
    for (src, &dst) in perm.iter().enumerate() {
        out[dst] = seq.data()[src];
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

// ---------------------------------------------------------------- layout

pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let mut seen = vec![false; x.rank()];
    if perm.len() != x.rank() || perm.iter().any(|&p| p >= x.rank() || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid("permute", format!("{perm:?} is not a permutation of rank {}", x.rank())));
    }
    let idx = kernels::permute_indices(x.shape(), perm);
    let data = idx.iter().map(|&i| x.data()[i]).collect();
    Ok(Tensor::from_parts(perm.iter().map(|&p| x.dim(p)).collect(), data))
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

// ---------------------------------------------------------------- losses

/// Mean Huber loss with transition point 1.0 over all elements.
pub fn huber_mean(pred: &Tensor, target: &Tensor) -> Result<f32> {
    same_shape("huber", pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| huber_elem((t - p) as f64))
        .sum();
    Ok((sum / pred.len() as f64) as f32)
}

#[inline]
pub(crate) fn huber_elem(r: f64) -> f64 {
    if r.abs() <= 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

/// Derivative of the Huber term with respect to the residual.
#[inline]
pub(crate) fn huber_slope(r: f32) -> f32 {
    if r.abs() <= 1.0 {
        r
    } else {
        r.signum()
    }
}
