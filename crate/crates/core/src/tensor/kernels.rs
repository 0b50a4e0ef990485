//! Slice-level kernels shared by the forward ops and their adjoints.
//!
//! Every kernel here runs with a fixed reduction order, so results do not
//! depend on how callers schedule work.

use super::ops::Padding;

/// `c = a · b + beta · c` where `a` is `m×k` (or `k×m` when `a_t`) and `b`
/// is `k×n` (or `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts
    // of `a`, `b` and `c` exactly.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output geometry of an NHWC convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Option<ConvGeom> {
        let [n, h, w, cin] = *x_shape else { return None };
        let [kh, kw, wcin, cout] = *w_shape else { return None };
        if wcin != cin || stride == 0 {
            return None;
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if h < kh || w < kw {
                    return None;
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = w.div_ceil(stride);
                let pad_h = ((ho - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((wo - 1) * stride + kw).saturating_sub(w);
                (ho, wo, pad_h / 2, pad_w / 2)
            }
        };
        Some(ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad_top,
            pad_left,
            ho,
            wo,
        })
    }

    pub fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// A 1×1 stride-1 convolution reads the input directly as its column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    #[inline]
    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

pub(crate) fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let k_len = g.patch_len();
    let mut cols = vec![0.0f32; g.rows() * k_len];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let dst = &mut cols[row * k_len..(row + 1) * k_len];
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.w) else { continue };
                        let src = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

pub(crate) fn col2im(cols: &[f32], g: &ConvGeom) -> Vec<f32> {
    let k_len = g.patch_len();
    let mut x = vec![0.0f32; g.n * g.h * g.w * g.cin];
    let mut row = 0;
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let src_row = &cols[row * k_len..(row + 1) * k_len];
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.w) else { continue };
                        let dst = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        for (d, s) in x[dst..dst + g.cin].iter_mut().zip(&src_row[off..off + g.cin]) {
                            *d += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    x
}

pub(crate) fn conv2d_forward(x: &[f32], w: &[f32], bias: &[f32], g: &ConvGeom) -> Vec<f32> {
    let m = g.rows();
    let mut out = Vec::with_capacity(m * g.cout);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    if g.is_pointwise() {
        gemm(m, g.cin, g.cout, x, false, w, false, &mut out, 1.0);
    } else {
        let cols = im2col(x, g);
        gemm(m, g.patch_len(), g.cout, &cols, false, w, false, &mut out, 1.0);
    }
    out
}

/// Adjoints of `conv2d_forward`: `(dx, dw, db)`. `dx` is skipped when not needed.
pub(crate) fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let m = g.rows();
    let k_len = g.patch_len();
    let mut db = vec![0.0f32; g.cout];
    for row in dy.chunks_exact(g.cout) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let mut dw = vec![0.0f32; k_len * g.cout];
    let dx = if g.is_pointwise() {
        gemm(k_len, m, g.cout, x, true, dy, false, &mut dw, 0.0);
        need_dx.then(|| {
            let mut dx = vec![0.0f32; m * k_len];
            gemm(m, g.cout, k_len, dy, false, w, true, &mut dx, 0.0);
            dx
        })
    } else {
        let cols = im2col(x, g);
        gemm(k_len, m, g.cout, &cols, true, dy, false, &mut dw, 0.0);
        drop(cols);
        need_dx.then(|| {
            let mut dcols = vec![0.0f32; m * k_len];
            gemm(m, g.cout, k_len, dy, false, w, true, &mut dcols, 0.0);
            col2im(&dcols, g)
        })
    };
    (dx, dw, db)
}

/// Source taps for one output coordinate under half-pixel-centre sampling:
/// `src = (dst + 0.5) / factor - 0.5`, clamped to `[0, len - 1]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub frac: f32,
}

pub(crate) fn half_pixel_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            Tap {
                i0,
                i1,
                frac: (src - i0 as f64) as f32,
            }
        })
        .collect()
}

/// Bilinear resampling of an NHWC buffer to `(ho, wo)`.
pub(crate) fn resize_bilinear(
    x: &[f32],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let ty = half_pixel_taps(h, ho);
    let tx = half_pixel_taps(w, wo);
    let mut out = vec![0.0f32; n * ho * wo * c];
    for b in 0..n {
        let base = b * h * w * c;
        for (oy, y) in ty.iter().enumerate() {
            for (ox, xt) in tx.iter().enumerate() {
                let dst = ((b * ho + oy) * wo + ox) * c;
                let p00 = base + (y.i0 * w + xt.i0) * c;
                let p01 = base + (y.i0 * w + xt.i1) * c;
                let p10 = base + (y.i1 * w + xt.i0) * c;
                let p11 = base + (y.i1 * w + xt.i1) * c;
                let (fy, fx) = (y.frac, xt.frac);
                for ch in 0..c {
                    let top = x[p00 + ch] * (1.0 - fx) + x[p01 + ch] * fx;
                    let bot = x[p10 + ch] * (1.0 - fx) + x[p11 + ch] * fx;
                    out[dst + ch] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    out
}

pub(crate) fn resize_bilinear_backward(
    dy: &[f32],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let ty = half_pixel_taps(h, ho);
    let tx = half_pixel_taps(w, wo);
    let mut dx = vec![0.0f32; n * h * w * c];
    for b in 0..n {
        let base = b * h * w * c;
        for (oy, y) in ty.iter().enumerate() {
            for (ox, xt) in tx.iter().enumerate() {
                let src = ((b * ho + oy) * wo + ox) * c;
                let (fy, fx) = (y.frac, xt.frac);
                let weights = [
                    ((y.i0 * w + xt.i0) * c, (1.0 - fy) * (1.0 - fx)),
                    ((y.i0 * w + xt.i1) * c, (1.0 - fy) * fx),
                    ((y.i1 * w + xt.i0) * c, fy * (1.0 - fx)),
                    ((y.i1 * w + xt.i1) * c, fy * fx),
                ];
                for (off, wt) in weights {
                    for ch in 0..c {
                        dx[base + off + ch] += wt * dy[src + ch];
                    }
                }
            }
        }
    }
    dx
}

/// Index of the unfolded element for a pixel: sequences are grouped by
/// intra-patch offset, tokens enumerate patches row-major.
///
/// Input `[n, h, w, c]` becomes `[n * p * p, (h / p) * (w / p), c]`.
pub(crate) fn unfold_perm(n: usize, h: usize, w: usize, c: usize, p: usize) -> Vec<usize> {
    let (nh, nw) = (h / p, w / p);
    let tokens = nh * nw;
    let mut perm = vec![0usize; n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let seq = b * p * p + (y % p) * p + (x % p);
                let tok = (y / p) * nw + (x / p);
                let src = ((b * h + y) * w + x) * c;
                let dst = (seq * tokens + tok) * c;
                for ch in 0..c {
                    perm[dst + ch] = src + ch;
                }
            }
        }
    }
    perm
}

/// Strides for a row-major shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather `src[perm[i]]` for every output index of a permuted-axes view.
pub(crate) fn permute_indices(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; out_shape.len()];
    let mut out = Vec::with_capacity(numel);
    for _ in 0..numel {
        out.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
