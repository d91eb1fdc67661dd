// Raw forward/backward loops over flat row-major buffers. The tape owns the
// bookkeeping; these functions only do arithmetic.
//
// Parallel loops always split over disjoint output chunks, and each output
// element is reduced in a fixed order, so results do not depend on the
// number of worker threads.

use rayon::prelude::*;

use super::{Real, Shape};
use crate::error::{Error, Result};

/// Output extent of a sliding window, or a geometry error when it would be empty.
pub fn window_out(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || k == 0 {
        return Err(Error::Parameter(format!(
            "window size {k} and stride {stride} must be positive"
        )));
    }
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Geometry(format!(
            "window {k} does not fit input extent {input} with padding {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Output indices `o` for which `o * stride + offset - pad` lands inside `[0, in_len)`.
#[inline]
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > offset {
        ((in_len + pad - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub(crate) struct ConvGeom {
    pub x: Shape,
    pub w: Shape,
    pub out: Shape,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(x: Shape, w: Shape, stride: usize, pad: usize) -> Result<Self> {
        if x.c() != w.c() {
            return Err(Error::Dimension(format!(
                "conv2d input {x} has {} channels but weight {w} expects {}",
                x.c(),
                w.c()
            )));
        }
        let oh = window_out(x.h(), w.h(), stride, pad)?;
        let ow = window_out(x.w(), w.w(), stride, pad)?;
        Ok(ConvGeom {
            x,
            w,
            out: Shape::new(x.b(), w.b(), oh, ow),
            stride,
            pad,
        })
    }
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let (ic_n, kh, kw) = (g.w.c(), g.w.h(), g.w.w());
    let (ih, iw) = (g.x.h(), g.x.w());
    let (oc_n, oh, ow) = (g.out.c(), g.out.h(), g.out.w());
    let (s, p) = (g.stride, g.pad);
    let mut out = vec![T::zero(); g.out.numel()];
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let n = plane_idx / oc_n;
            let oc = plane_idx % oc_n;
            out_plane.fill(bias[oc]);
            for ic in 0..ic_n {
                let x_plane = &x[(n * ic_n + ic) * ih * iw..][..ih * iw];
                let w_base = (oc * ic_n + ic) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, ih, oh);
                    for kx in 0..kw {
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, iw, ow);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let wv = w[w_base + ky * kw + kx];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let in_row = &x_plane[iy * iw..(iy + 1) * iw];
                            let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                            if s == 1 {
                                let ix0 = ox_lo + kx - p;
                                let len = ox_hi - ox_lo;
                                for (o, &i) in out_row[ox_lo..ox_hi]
                                    .iter_mut()
                                    .zip(&in_row[ix0..ix0 + len])
                                {
                                    *o += wv * i;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    out_row[ox] += wv * in_row[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

pub(crate) fn conv2d_backward_input<T: Real>(g: &ConvGeom, grad: &[T], w: &[T]) -> Vec<T> {
    let (ic_n, kh, kw) = (g.w.c(), g.w.h(), g.w.w());
    let (ih, iw) = (g.x.h(), g.x.w());
    let (oc_n, oh, ow) = (g.out.c(), g.out.h(), g.out.w());
    let (s, p) = (g.stride, g.pad);
    let mut gx = vec![T::zero(); g.x.numel()];
    gx.par_chunks_mut(ih * iw)
        .enumerate()
        .for_each(|(plane_idx, gx_plane)| {
            let n = plane_idx / ic_n;
            let ic = plane_idx % ic_n;
            for oc in 0..oc_n {
                let g_plane = &grad[(n * oc_n + oc) * oh * ow..][..oh * ow];
                let w_base = (oc * ic_n + ic) * kh * kw;
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, ih, oh);
                    for kx in 0..kw {
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, iw, ow);
                        let wv = w[w_base + ky * kw + kx];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                            let gx_row = &mut gx_plane[iy * iw..(iy + 1) * iw];
                            for ox in ox_lo..ox_hi {
                                gx_row[ox * s + kx - p] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        });
    gx
}

pub(crate) fn conv2d_backward_weight<T: Real>(g: &ConvGeom, grad: &[T], x: &[T]) -> Vec<T> {
    let (ic_n, kh, kw) = (g.w.c(), g.w.h(), g.w.w());
    let (ih, iw) = (g.x.h(), g.x.w());
    let (oc_n, oh, ow) = (g.out.c(), g.out.h(), g.out.w());
    let (s, p) = (g.stride, g.pad);
    let batch = g.x.b();
    let mut gw = vec![T::zero(); g.w.numel()];
    gw.par_chunks_mut(ic_n * kh * kw)
        .enumerate()
        .for_each(|(oc, gw_oc)| {
            for n in 0..batch {
                let g_plane = &grad[(n * oc_n + oc) * oh * ow..][..oh * ow];
                for ic in 0..ic_n {
                    let x_plane = &x[(n * ic_n + ic) * ih * iw..][..ih * iw];
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid_range(ky, p, s, ih, oh);
                        for kx in 0..kw {
                            let (ox_lo, ox_hi) = valid_range(kx, p, s, iw, ow);
                            let mut acc = T::zero();
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                let g_row = &g_plane[oy * ow..(oy + 1) * ow];
                                let x_row = &x_plane[iy * iw..(iy + 1) * iw];
                                for ox in ox_lo..ox_hi {
                                    acc += g_row[ox] * x_row[ox * s + kx - p];
                                }
                            }
                            gw_oc[(ic * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        });
    gw
}

/// Sum of the gradient over batch and space, per output channel.
pub(crate) fn channel_sums<T: Real>(grad: &[T], shape: Shape) -> Vec<T> {
    let plane = shape.plane();
    let mut out = vec![T::zero(); shape.c()];
    for n in 0..shape.b() {
        for (c, acc) in out.iter_mut().enumerate() {
            let start = (n * shape.c() + c) * plane;
            for &v in &grad[start..start + plane] {
                *acc += v;
            }
        }
    }
    out
}

/// Windowed max/avg pooling without padding. Returns the output and, for max
/// pooling, the flat input index that won each window (first in scan order).
pub(crate) fn pool2d_forward<T: Real>(
    x: &[T],
    xs: Shape,
    k: usize,
    stride: usize,
    max: bool,
) -> Result<(Vec<T>, Shape, Vec<usize>)> {
    let oh = window_out(xs.h(), k, stride, 0)?;
    let ow = window_out(xs.w(), k, stride, 0)?;
    let out_shape = Shape::new(xs.b(), xs.c(), oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::new();
    let inv = T::one() / T::lit((k * k) as f64);
    for plane in 0..xs.b() * xs.c() {
        let base = plane * xs.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = 0;
                let mut sum = T::zero();
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * xs.w() + ox * stride + kx;
                        let v = x[idx];
                        if max {
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        } else {
                            sum += v;
                        }
                    }
                }
                if max {
                    out.push(best);
                    argmax.push(best_idx);
                } else {
                    out.push(sum * inv);
                }
            }
        }
    }
    Ok((out, out_shape, argmax))
}

pub(crate) fn avgpool2d_backward<T: Real>(grad: &[T], xs: Shape, os: Shape, k: usize, stride: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); xs.numel()];
    let inv = T::one() / T::lit((k * k) as f64);
    for plane in 0..xs.b() * xs.c() {
        let base = plane * xs.plane();
        for oy in 0..os.h() {
            for ox in 0..os.w() {
                let g = grad[plane * os.plane() + oy * os.w() + ox] * inv;
                for ky in 0..k {
                    for kx in 0..k {
                        gx[base + (oy * stride + ky) * xs.w() + ox * stride + kx] += g;
                    }
                }
            }
        }
    }
    gx
}

pub(crate) fn scatter_argmax<T: Real>(grad: &[T], argmax: &[usize], len: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); len];
    for (&g, &idx) in grad.iter().zip(argmax) {
        gx[idx] += g;
    }
    gx
}

pub(crate) fn upsample_forward<T: Real>(x: &[T], xs: Shape, f: usize) -> (Vec<T>, Shape) {
    let os = Shape::new(xs.b(), xs.c(), xs.h() * f, xs.w() * f);
    let mut out = Vec::with_capacity(os.numel());
    for plane in 0..xs.b() * xs.c() {
        let src = &x[plane * xs.plane()..(plane + 1) * xs.plane()];
        for y in 0..os.h() {
            let row = &src[(y / f) * xs.w()..(y / f + 1) * xs.w()];
            for v in row {
                for _ in 0..f {
                    out.push(*v);
                }
            }
        }
    }
    (out, os)
}

pub(crate) fn upsample_backward<T: Real>(grad: &[T], xs: Shape, f: usize) -> Vec<T> {
    let (oh, ow) = (xs.h() * f, xs.w() * f);
    let mut gx = vec![T::zero(); xs.numel()];
    for plane in 0..xs.b() * xs.c() {
        let g = &grad[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gx[plane * xs.plane()..(plane + 1) * xs.plane()];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / f) * xs.w() + x / f] += g[y * ow + x];
            }
        }
    }
    gx
}

pub(crate) fn conv1d_channels_forward<T: Real>(v: &[T], b: usize, c: usize, w: &[T]) -> Vec<T> {
    let half = w.len() / 2;
    let mut out = vec![T::zero(); b * c];
    for n in 0..b {
        let src = &v[n * c..(n + 1) * c];
        for i in 0..c {
            let mut acc = T::zero();
            for (j, &wj) in w.iter().enumerate() {
                if let Some(pos) = (i + j).checked_sub(half) {
                    if pos < c {
                        acc += wj * src[pos];
                    }
                }
            }
            out[n * c + i] = acc;
        }
    }
    out
}

pub(crate) fn conv1d_channels_backward<T: Real>(
    grad: &[T],
    v: &[T],
    b: usize,
    c: usize,
    w: &[T],
) -> (Vec<T>, Vec<T>) {
    let half = w.len() / 2;
    let mut gv = vec![T::zero(); b * c];
    let mut gw = vec![T::zero(); w.len()];
    for n in 0..b {
        for i in 0..c {
            let g = grad[n * c + i];
            for (j, &wj) in w.iter().enumerate() {
                if let Some(pos) = (i + j).checked_sub(half) {
                    if pos < c {
                        gv[n * c + pos] += wj * g;
                        gw[j] += g * v[n * c + pos];
                    }
                }
            }
        }
    }
    (gv, gw)
}

pub(crate) fn dense_forward<T: Real>(x: &[T], batch: usize, n_in: usize, w: &[T], bias: &[T]) -> Vec<T> {
    let m = bias.len();
    let mut out = Vec::with_capacity(batch * m);
    for n in 0..batch {
        let xi = &x[n * n_in..(n + 1) * n_in];
        for (row, &b) in w.chunks_exact(n_in).zip(bias) {
            let mut acc = b;
            for (&wv, &xv) in row.iter().zip(xi) {
                acc += wv * xv;
            }
            out.push(acc);
        }
    }
    out
}

/// Channel-wise maximum at each pixel. Argmax entries are flat input indices.
pub(crate) fn channel_max_forward<T: Real>(x: &[T], xs: Shape) -> (Vec<T>, Vec<usize>) {
    let plane = xs.plane();
    let mut out = Vec::with_capacity(xs.b() * plane);
    let mut argmax = Vec::with_capacity(xs.b() * plane);
    for n in 0..xs.b() {
        for p in 0..plane {
            let mut best_idx = n * xs.item() + p;
            let mut best = x[best_idx];
            for c in 1..xs.c() {
                let idx = (n * xs.c() + c) * plane + p;
                if x[idx] > best {
                    best = x[idx];
                    best_idx = idx;
                }
            }
            out.push(best);
            argmax.push(best_idx);
        }
    }
    (out, argmax)
}
