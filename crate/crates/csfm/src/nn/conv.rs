//! 2-D convolution (cross-correlation) with zero padding, stride 1.
//!
//! Weight layout is `(c_out, c_in, kh, kw)`, bias is `(1, c_out, 1, 1)`.
//! The kernel is applied without flipping, i.e.
//!
//! ```text
//! out[n][oc][oy][ox] = bias[oc]
//!     + sum over ic, ky, kx of w[oc][ic][ky][kx] * x[n][ic][oy+ky-pad][ox+kx-pad]
//! ```
//!
//! with out-of-range taps reading zero. Every output element accumulates in
//! the fixed order `(ic, ky, kx)` outer, rows inner; parallelism only splits
//! work across disjoint output regions, so results are bitwise identical for
//! any worker-thread count.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{fmt_shape, Error, Result};
use crate::tensor::{Backward, GradContrib, NodeId, Scalar, Shape, Tape, Tensor};

/// Row window arithmetic: the half-open output range `[lo, hi)` for which
/// `o + k - pad` lands inside `[0, in_len)`.
#[inline]
fn tap_window(k: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (in_len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

struct ConvDims {
    n: usize,
    c_in: usize,
    c_out: usize,
    h_in: usize,
    w_in: usize,
    h_out: usize,
    w_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
}

impl ConvDims {
    fn check(x: Shape, w: Shape, b: Shape, pad: usize) -> Result<ConvDims> {
        if w.c != x.c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weight {} expects {} input channels, input {} has {}",
                    fmt_shape(w),
                    w.c,
                    fmt_shape(x),
                    x.c
                ),
            ));
        }
        if b != Shape::new(1, w.n, 1, 1) {
            return Err(Error::shape(
                "conv2d",
                format!("bias {} must be 1x{}x1x1", fmt_shape(b), w.n),
            ));
        }
        let (h_pad, w_pad) = (x.h + 2 * pad, x.w + 2 * pad);
        if h_pad < w.h || w_pad < w.w {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {}x{} exceeds padded input {}x{}",
                    w.h, w.w, h_pad, w_pad
                ),
            ));
        }
        Ok(ConvDims {
            n: x.n,
            c_in: x.c,
            c_out: w.n,
            h_in: x.h,
            w_in: x.w,
            h_out: h_pad - w.h + 1,
            w_out: w_pad - w.w + 1,
            kh: w.h,
            kw: w.w,
            pad,
        })
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.c_out, self.h_out, self.w_out)
    }
}

/// Computes one output plane `(n, oc)` into `out_plane`.
fn forward_plane<S: Scalar>(d: &ConvDims, x: &[S], w: &[S], bias: S, n: usize, oc: usize, out_plane: &mut [S]) {
    out_plane.fill(bias);
    let in_plane = d.h_in * d.w_in;
    let w_oc = &w[oc * d.c_in * d.kh * d.kw..][..d.c_in * d.kh * d.kw];
    for ic in 0..d.c_in {
        let x_plane = &x[(n * d.c_in + ic) * in_plane..][..in_plane];
        for ky in 0..d.kh {
            let (oy_lo, oy_hi) = tap_window(ky, d.pad, d.h_in, d.h_out);
            for kx in 0..d.kw {
                let w0 = w_oc[(ic * d.kh + ky) * d.kw + kx];
                let (ox_lo, ox_hi) = tap_window(kx, d.pad, d.w_in, d.w_out);
                if ox_lo >= ox_hi {
                    continue;
                }
                let span = ox_hi - ox_lo;
                for oy in oy_lo..oy_hi {
                    let iy = oy + ky - d.pad;
                    let ix0 = ox_lo + kx - d.pad;
                    let src = &x_plane[iy * d.w_in + ix0..][..span];
                    let dst = &mut out_plane[oy * d.w_out + ox_lo..][..span];
                    for i in 0..span {
                        dst[i] = dst[i] + w0 * src[i];
                    }
                }
            }
        }
    }
}

/// Splits `data` into `chunk`-sized pieces and runs `f(chunk_index, piece)`,
/// in parallel when a worker pool is configured. Pieces are disjoint and `f`
/// is pure per piece, so scheduling cannot affect results.
fn for_each_chunk<S: Scalar, F>(data: &mut [S], chunk: usize, f: F)
where
    F: Fn(usize, &mut [S]) + Send + Sync,
{
    match crate::thread_pool() {
        Some(pool) => pool.install(|| {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, piece)| f(i, piece));
        }),
        None => {
            for (i, piece) in data.chunks_mut(chunk).enumerate() {
                f(i, piece);
            }
        }
    }
}

struct ConvBackward<S: Scalar> {
    x_node: Option<NodeId>,
    w_node: Option<NodeId>,
    b_node: Option<NodeId>,
    x_data: Arc<Vec<S>>,
    w_data: Arc<Vec<S>>,
    x_shape: Shape,
    w_shape: Shape,
    pad: usize,
}

impl<S: Scalar> ConvBackward<S> {
    fn dims(&self) -> ConvDims {
        ConvDims::check(
            self.x_shape,
            self.w_shape,
            Shape::new(1, self.w_shape.n, 1, 1),
            self.pad,
        )
        .expect("shapes were validated in the forward pass")
    }

    /// dL/dx: full correlation of the output gradient with the kernel,
    /// scattered back through the same tap windows as the forward pass.
    fn grad_x(&self, d: &ConvDims, g: &[S]) -> Vec<S> {
        let mut dx = vec![S::zero(); self.x_shape.numel()];
        let in_plane = d.h_in * d.w_in;
        let out_plane = d.h_out * d.w_out;
        let w = &self.w_data;
        for_each_chunk(&mut dx, in_plane, |p, dx_plane| {
            let (n, ic) = (p / d.c_in, p % d.c_in);
            for oc in 0..d.c_out {
                let g_plane = &g[(n * d.c_out + oc) * out_plane..][..out_plane];
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = tap_window(ky, d.pad, d.h_in, d.h_out);
                    for kx in 0..d.kw {
                        let w0 = w[((oc * d.c_in + ic) * d.kh + ky) * d.kw + kx];
                        let (ox_lo, ox_hi) = tap_window(kx, d.pad, d.w_in, d.w_out);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let span = ox_hi - ox_lo;
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - d.pad;
                            let ix0 = ox_lo + kx - d.pad;
                            let src = &g_plane[oy * d.w_out + ox_lo..][..span];
                            let dst = &mut dx_plane[iy * d.w_in + ix0..][..span];
                            for i in 0..span {
                                dst[i] = dst[i] + w0 * src[i];
                            }
                        }
                    }
                }
            }
        });
        dx
    }

    /// dL/dw: per-tap dot products between the output gradient and the
    /// input, accumulated over the batch in index order.
    fn grad_w(&self, d: &ConvDims, g: &[S]) -> Vec<S> {
        let mut dw = vec![S::zero(); self.w_shape.numel()];
        let in_plane = d.h_in * d.w_in;
        let out_plane = d.h_out * d.w_out;
        let x = &self.x_data;
        let per_oc = d.c_in * d.kh * d.kw;
        for_each_chunk(&mut dw, per_oc, |oc, dw_oc| {
            for n in 0..d.n {
                let g_plane = &g[(n * d.c_out + oc) * out_plane..][..out_plane];
                for ic in 0..d.c_in {
                    let x_plane = &x[(n * d.c_in + ic) * in_plane..][..in_plane];
                    for ky in 0..d.kh {
                        let (oy_lo, oy_hi) = tap_window(ky, d.pad, d.h_in, d.h_out);
                        for kx in 0..d.kw {
                            let (ox_lo, ox_hi) = tap_window(kx, d.pad, d.w_in, d.w_out);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let span = ox_hi - ox_lo;
                            let mut acc = S::zero();
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - d.pad;
                                let ix0 = ox_lo + kx - d.pad;
                                let gr = &g_plane[oy * d.w_out + ox_lo..][..span];
                                let xr = &x_plane[iy * d.w_in + ix0..][..span];
                                for i in 0..span {
                                    acc = acc + gr[i] * xr[i];
                                }
                            }
                            let slot = (ic * d.kh + ky) * d.kw + kx;
                            dw_oc[slot] = dw_oc[slot] + acc;
                        }
                    }
                }
            }
        });
        dw
    }

    /// dL/db: sum of the output gradient over batch and pixels per channel.
    fn grad_b(&self, d: &ConvDims, g: &[S]) -> Vec<S> {
        let out_plane = d.h_out * d.w_out;
        let mut db = vec![S::zero(); d.c_out];
        for_each_chunk(&mut db, 1, |oc, slot| {
            let mut acc = S::zero();
            for n in 0..d.n {
                for v in &g[(n * d.c_out + oc) * out_plane..][..out_plane] {
                    acc = acc + *v;
                }
            }
            slot[0] = acc;
        });
        db
    }
}

impl<S: Scalar> Backward<S> for ConvBackward<S> {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let d = self.dims();
        let mut out = Vec::new();
        if let Some(xn) = self.x_node {
            out.push((xn, self.grad_x(&d, grad_out)));
        }
        if let Some(wn) = self.w_node {
            out.push((wn, self.grad_w(&d, grad_out)));
        }
        if let Some(bn) = self.b_node {
            out.push((bn, self.grad_b(&d, grad_out)));
        }
        out
    }
}

/// Convolution with zero padding and stride 1. See the module docs for the
/// exact arithmetic. `weight` is `(c_out, c_in, kh, kw)`; `bias` is
/// `(1, c_out, 1, 1)`.
pub fn conv2d<S: Scalar>(
    tape: &mut Tape<S>,
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    pad: usize,
) -> Result<Tensor<S>> {
    let d = ConvDims::check(x.shape(), weight.shape(), bias.shape(), pad)?;
    let out_shape = d.out_shape();
    let mut out = vec![S::zero(); out_shape.numel()];
    let out_plane = d.h_out * d.w_out;
    {
        let (xd, wd, bd) = (x.data(), weight.data(), bias.data());
        for_each_chunk(&mut out, out_plane, |p, plane| {
            let (n, oc) = (p / d.c_out, p % d.c_out);
            forward_plane(&d, xd, wd, bd[oc], n, oc, plane);
        });
    }
    let out = Tensor::from_parts(out_shape, out);

    let (xn, wn, bn) = (tape.node_of(x), tape.node_of(weight), tape.node_of(bias));
    if xn.is_some() || wn.is_some() || bn.is_some() {
        tape.record(
            &out,
            Box::new(ConvBackward {
                x_node: xn,
                w_node: wn,
                b_node: bn,
                x_data: x.buffer(),
                w_data: weight.buffer(),
                x_shape: x.shape(),
                w_shape: weight.shape(),
                pad,
            }),
        );
    }
    Ok(out)
}
