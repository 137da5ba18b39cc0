//! Raw forward/backward kernels behind the graph operators.
//!
//! Every parallel kernel writes each output element from exactly one task and
//! reduces in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

/// Geometry of a same-padded, stride-1 3D convolution over `[B][T][C][H][W]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv3dGeom {
    b: usize,
    t: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kt: usize,
    kh: usize,
    kw: usize,
}

impl Conv3dGeom {
    pub(crate) fn new(x: &[usize], w: &[usize], bias: &[usize]) -> Result<Self> {
        if x.len() != 5 || w.len() != 5 || x[2] != w[1] {
            return Err(mismatch("conv3d", x, w));
        }
        if w[2].is_multiple_of(2) || w[3].is_multiple_of(2) || w[4].is_multiple_of(2) {
            return Err(Error::InvalidShape { shape: w.to_vec(), reason: "conv3d kernels must have odd extents".into() });
        }
        if bias != [w[0]] {
            return Err(mismatch("conv3d", w, bias));
        }
        Ok(Conv3dGeom { b: x[0], t: x[1], ci: x[2], h: x[3], w: x[4], co: w[0], kt: w[2], kh: w[3], kw: w[4] })
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Spatial offset of tap `(dh, dw)` and the output index ranges for which
    /// the shifted input index stays inside the image.
    fn taps(&self, dh: usize, dw: usize) -> (isize, isize, (usize, usize), (usize, usize)) {
        let oy = dh as isize - (self.kh / 2) as isize;
        let ox = dw as isize - (self.kw / 2) as isize;
        let range = |off: isize, n: usize| {
            let lo = (-off).max(0) as usize;
            let hi = (n as isize - off).clamp(0, n as isize) as usize;
            (lo, hi.max(lo))
        };
        (oy, ox, range(oy, self.h), range(ox, self.w))
    }

    fn src_t(&self, t: usize, dt: usize) -> Option<usize> {
        let tt = t as isize + dt as isize - (self.kt / 2) as isize;
        (tt >= 0 && (tt as usize) < self.t).then_some(tt as usize)
    }
}

/// `c <- a * b + beta * c` for strided row-major views, via `dgemm`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    let extent = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs + 1;
    assert!(a.len() >= extent(m, k, a_strides) && b.len() >= extent(k, n, b_strides) && c.len() >= m * n);
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Conv3dGeom {
    fn taps_len(&self) -> usize {
        self.ci * self.kt * self.kh * self.kw
    }

    /// Patch matrix `[ci*kt*kh*kw][h*w]` of sample `bi`, frame `t`, rows in
    /// weight order; out-of-range taps are zero.
    fn im2col(&self, x: &[f64], bi: usize, t: usize, col: &mut [f64]) {
        let plane = self.plane();
        col.fill(0.0);
        for ci in 0..self.ci {
            for dt in 0..self.kt {
                let Some(tt) = self.src_t(t, dt) else { continue };
                let base = ((bi * self.t + tt) * self.ci + ci) * plane;
                let xin = &x[base..base + plane];
                for dh in 0..self.kh {
                    for dw in 0..self.kw {
                        let row = ((ci * self.kt + dt) * self.kh + dh) * self.kw + dw;
                        let dst = &mut col[row * plane..(row + 1) * plane];
                        let (oy, ox, (h0, h1), (w0, w1)) = self.taps(dh, dw);
                        for h in h0..h1 {
                            let src = ((h as isize + oy) as usize * self.w) as isize + w0 as isize + ox;
                            let src = src as usize;
                            dst[h * self.w + w0..h * self.w + w1].copy_from_slice(&xin[src..src + (w1 - w0)]);
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-gradient matrix back into sample `bi` of `gx`
    /// (which holds all `t` frames of that sample).
    fn col2im(&self, gcol: &[f64], t: usize, gx: &mut [f64]) {
        let plane = self.plane();
        for ci in 0..self.ci {
            for dt in 0..self.kt {
                let Some(tt) = self.src_t(t, dt) else { continue };
                let base = (tt * self.ci + ci) * plane;
                for dh in 0..self.kh {
                    for dw in 0..self.kw {
                        let row = ((ci * self.kt + dt) * self.kh + dh) * self.kw + dw;
                        let src = &gcol[row * plane..(row + 1) * plane];
                        let (oy, ox, (h0, h1), (w0, w1)) = self.taps(dh, dw);
                        for h in h0..h1 {
                            let dst = ((h as isize + oy) as usize * self.w) as isize + w0 as isize + ox;
                            let dst = base + dst as usize;
                            for (a, &v) in gx[dst..dst + (w1 - w0)].iter_mut().zip(&src[h * self.w + w0..h * self.w + w1]) {
                                *a += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = Conv3dGeom::new(x.shape(), w.shape(), bias.shape())?;
    let (plane, kk) = (g.plane(), g.taps_len());
    let (xd, wd, bd) = (x.data(), w.data(), bias.data());
    let mut out = vec![0.0; g.b * g.t * g.co * plane];
    out.par_chunks_mut(g.co * plane).enumerate().for_each_init(
        || vec![0.0; kk * plane],
        |col, (bt, chunk)| {
            g.im2col(xd, bt / g.t, bt % g.t, col);
            for (co, o) in chunk.chunks_mut(plane).enumerate() {
                o.fill(bd[co]);
            }
            gemm(g.co, kk, plane, wd, (kk, 1), col, (plane, 1), 1.0, chunk);
        },
    );
    Tensor::new(vec![g.b, g.t, g.co, g.h, g.w], out)
}

pub(crate) fn conv3d_grad_input(gout: &Tensor, w: &Tensor, x_shape: &[usize]) -> Result<Tensor> {
    let g = Conv3dGeom::new(x_shape, w.shape(), &[w.shape()[0]])?;
    let (plane, kk) = (g.plane(), g.taps_len());
    let (gd, wd) = (gout.data(), w.data());
    let mut gx = vec![0.0; g.b * g.t * g.ci * plane];
    // one task per sample: col2im scatters across neighbouring frames
    gx.par_chunks_mut(g.t * g.ci * plane).enumerate().for_each_init(
        || vec![0.0; kk * plane],
        |gcol, (bi, chunk)| {
            for t in 0..g.t {
                let base = (bi * g.t + t) * g.co * plane;
                // W^T [K][Co] x gout [Co][P]
                gemm(kk, g.co, plane, wd, (1, kk), &gd[base..base + g.co * plane], (plane, 1), 0.0, gcol);
                g.col2im(gcol, t, chunk);
            }
        },
    );
    Tensor::new(x_shape.to_vec(), gx)
}

pub(crate) fn conv3d_grad_weight(gout: &Tensor, x: &Tensor, w_shape: &[usize]) -> Result<Tensor> {
    let g = Conv3dGeom::new(x.shape(), w_shape, &[w_shape[0]])?;
    let (plane, kk) = (g.plane(), g.taps_len());
    let (gd, xd) = (gout.data(), x.data());
    // per-sample partial sums, reduced below in sample order
    let partials: Vec<Vec<f64>> = (0..g.b)
        .into_par_iter()
        .map(|bi| {
            let mut col = vec![0.0; kk * plane];
            let mut acc = vec![0.0; g.co * kk];
            for t in 0..g.t {
                g.im2col(xd, bi, t, &mut col);
                let base = (bi * g.t + t) * g.co * plane;
                // gout [Co][P] x col^T [P][K]
                gemm(g.co, plane, kk, &gd[base..base + g.co * plane], (plane, 1), &col, (1, plane), 1.0, &mut acc);
            }
            acc
        })
        .collect();
    let mut gw = vec![0.0; g.co * kk];
    for p in &partials {
        for (a, v) in gw.iter_mut().zip(p) {
            *a += v;
        }
    }
    Tensor::new(w_shape.to_vec(), gw)
}

pub(crate) fn conv3d_grad_bias(gout: &Tensor) -> Tensor {
    let s = gout.shape();
    let (co, plane) = (s[2], s[3] * s[4]);
    let mut gb = vec![0.0; co];
    for chunk in gout.data().chunks(co * plane) {
        for (c, acc) in gb.iter_mut().enumerate() {
            *acc += chunk[c * plane..(c + 1) * plane].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![co], gb).expect("co >= 1")
}

/// Output length of a valid (unpadded) strided 1-D convolution.
pub(crate) fn temporal_conv_len(len: usize, k: usize, stride: usize) -> Option<usize> {
    (stride >= 1 && k >= 1 && len >= k).then(|| (len - k) / stride + 1)
}

/// `out[t] = sum_j kernel[j] * x[t*stride + j] + bias` along the leading axis,
/// with the kernel shared over all trailing positions.
pub(crate) fn temporal_conv(x: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (k, len) = (kernel.len(), x.shape()[0]);
    if kernel.shape().len() != 1 || !bias.is_scalar() {
        return Err(mismatch("temporal_conv1d", kernel.shape(), bias.shape()));
    }
    let out_len = temporal_conv_len(len, k, stride).ok_or_else(|| mismatch("temporal_conv1d", x.shape(), kernel.shape()))?;
    let row = x.row_len();
    let mut out = vec![bias.item(); out_len * row];
    for (t, orow) in out.chunks_mut(row).enumerate() {
        for (j, &kv) in kernel.data().iter().enumerate() {
            for (a, &v) in orow.iter_mut().zip(x.row(t * stride + j)) {
                *a += kv * v;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = out_len;
    Tensor::new(shape, out)
}

/// Gradients of [`temporal_conv`] w.r.t. input, kernel and bias.
pub(crate) fn temporal_conv_grads(gout: &Tensor, x: &Tensor, kernel: &Tensor, stride: usize) -> (Tensor, Tensor, Tensor) {
    let row = x.row_len();
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = vec![0.0; kernel.len()];
    for t in 0..gout.shape()[0] {
        let grow = gout.row(t);
        for (j, &kv) in kernel.data().iter().enumerate() {
            let src = (t * stride + j) * row;
            gk[j] += grow.iter().zip(x.row(t * stride + j)).map(|(a, b)| a * b).sum::<f64>();
            for (a, &g) in gx.data_mut()[src..src + row].iter_mut().zip(grow) {
                *a += kv * g;
            }
        }
    }
    let gk = Tensor::new(kernel.shape().to_vec(), gk).expect("kernel shape");
    (gx, gk, Tensor::scalar(gout.sum()))
}

/// One output frame of a linear temporal resample: `(1-frac)*x[lo] + frac*x[hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LerpTap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Sample `t_out` frames at evenly spaced fractional positions from `start` to
/// `end` (frame units, inclusive) of a `len`-frame sequence.
///
/// With `start = 0`, `end = len - 1` this is the plain resample; a single
/// output frame samples `start`.
pub fn lerp_plan(len: usize, start: f64, end: f64, t_out: usize) -> Vec<LerpTap> {
    let last = (len - 1) as f64;
    (0..t_out)
        .map(|t| {
            let pos = if t_out == 1 { start } else { start + (end - start) * t as f64 / (t_out - 1) as f64 };
            let pos = pos.clamp(0.0, last);
            let lo = (pos.floor() as usize).min(len - 1);
            if lo + 1 >= len {
                LerpTap { lo, hi: lo, frac: 0.0 }
            } else {
                LerpTap { lo, hi: lo + 1, frac: pos - lo as f64 }
            }
        })
        .collect()
}

pub(crate) fn resample(x: &Tensor, plan: &[LerpTap]) -> Tensor {
    let row = x.row_len();
    let mut out = Vec::with_capacity(plan.len() * row);
    for tap in plan {
        let lo = x.row(tap.lo);
        if tap.frac == 0.0 {
            out.extend_from_slice(lo);
        } else {
            let hi = x.row(tap.hi);
            out.extend(lo.iter().zip(hi).map(|(a, b)| (1.0 - tap.frac) * a + tap.frac * b));
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = plan.len();
    Tensor::new(shape, out).expect("plan is non-empty")
}

pub(crate) fn resample_grad(gout: &Tensor, plan: &[LerpTap], x_shape: &[usize]) -> Tensor {
    let mut gx = Tensor::zeros(x_shape);
    let row = gx.row_len();
    for (t, tap) in plan.iter().enumerate() {
        let g = gout.row(t);
        let data = gx.data_mut();
        for (a, &v) in data[tap.lo * row..(tap.lo + 1) * row].iter_mut().zip(g) {
            *a += (1.0 - tap.frac) * v;
        }
        if tap.frac != 0.0 {
            for (a, &v) in data[tap.hi * row..(tap.hi + 1) * row].iter_mut().zip(g) {
                *a += tap.frac * v;
            }
        }
    }
    gx
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(mismatch("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    Tensor::from_fn(&[n, m], |idx| {
        let (j, i) = (idx / m, idx % m);
        d[i * n + j]
    })
}

/// Non-overlapping `k x k` average pool over the last two axes.
pub(crate) fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let s = x.shape();
    let r = s.len();
    if r < 2 || k == 0 || !s[r - 2].is_multiple_of(k) || !s[r - 1].is_multiple_of(k) {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: format!("avg_pool: trailing extents must be divisible by {k}") });
    }
    let (h, w) = (s[r - 2], s[r - 1]);
    let (oh, ow) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let mut out = Vec::with_capacity(x.len() / (k * k));
    for plane in x.data().chunks(h * w) {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for di in 0..k {
                    let row = &plane[(i * k + di) * w + j * k..][..k];
                    acc += row.iter().sum::<f64>();
                }
                out.push(acc * norm);
            }
        }
    }
    let mut shape = s.to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(shape, out)
}

pub(crate) fn avg_pool_grad(gout: &Tensor, k: usize, x_shape: &[usize]) -> Tensor {
    let r = x_shape.len();
    let (h, w) = (x_shape[r - 2], x_shape[r - 1]);
    let (oh, ow) = (h / k, w / k);
    let norm = 1.0 / (k * k) as f64;
    let mut gx = Tensor::zeros(x_shape);
    for (plane, gplane) in gx.data_mut().chunks_mut(h * w).zip(gout.data().chunks(oh * ow)) {
        for i in 0..h {
            for j in 0..w {
                plane[i * w + j] = gplane[(i / k) * ow + j / k] * norm;
            }
        }
    }
    gx
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn mean_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let s = x.shape();
    if axis >= s.len() {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: format!("mean over axis {axis} out of range") });
    }
    let (outer, n, inner) = axis_split(s, axis);
    let d = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for a in 0..n {
            let src = &d[(o * n + a) * inner..][..inner];
            for (acc, &v) in dst.iter_mut().zip(src) {
                *acc += v;
            }
        }
        for acc in dst.iter_mut() {
            *acc /= n as f64;
        }
    }
    let mut shape: Vec<usize> = s.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &e)| e).collect();
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::new(shape, out)
}

pub(crate) fn mean_axis_grad(gout: &Tensor, axis: usize, x_shape: &[usize]) -> Tensor {
    let (outer, n, inner) = axis_split(x_shape, axis);
    let g = gout.data();
    let scale = 1.0 / n as f64;
    Tensor::from_fn(x_shape, |idx| {
        let o = idx / (n * inner);
        let i = idx % inner;
        let _ = outer;
        g[o * inner + i] * scale
    })
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub(crate) fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(mismatch("softmax_cross_entropy", s, &[labels.len()]));
    }
    let (b, n) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::LabelMismatch(format!("label {bad} out of range for {n} logits")));
    }
    let mut probs = Vec::with_capacity(b * n);
    let mut loss = 0.0;
    for (row, &label) in logits.data().chunks(n).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[label];
        probs.extend(row.iter().map(|v| (v - max).exp() / z));
    }
    Ok((loss / b as f64, Tensor::new(vec![b, n], probs)?))
}

pub(crate) const NORMALIZE_EPS: f64 = 1e-12;

pub(crate) fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::InvalidShape { shape: x.shape().to_vec(), reason: "l2_normalize_rows expects a matrix".into() });
    }
    let d = x.shape()[1];
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        let norm = (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt();
        out.extend(row.iter().map(|v| v / norm));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn l2_normalize_rows_grad(gout: &Tensor, x: &Tensor) -> Tensor {
    let d = x.shape()[1];
    let mut gx = Vec::with_capacity(x.len());
    for (row, grow) in x.data().chunks(d).zip(gout.data().chunks(d)) {
        let norm = (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt();
        let dot: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
        let n3 = norm * norm * norm;
        gx.extend(row.iter().zip(grow).map(|(&xv, &g)| g / norm - xv * dot / n3));
    }
    Tensor::new(x.shape().to_vec(), gx).expect("same shape")
}

pub(crate) fn concat0(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts[0];
    let tail = &first.shape()[1..];
    let mut len = 0;
    let mut data = Vec::new();
    for p in parts {
        if &p.shape()[1..] != tail {
            return Err(mismatch("concat", first.shape(), p.shape()));
        }
        len += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = len;
    Tensor::new(shape, data)
}
