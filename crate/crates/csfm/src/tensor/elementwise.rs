//! Pointwise tensor arithmetic: add, multiply, scalar scale, channel
//! concatenation, and full reduction.
//!
//! `add` and `mul` support three layouts for the second operand:
//!
//! * same shape as the first operand,
//! * per-channel column `n x c x 1 x 1` (broadcast over every pixel), used
//!   by channel attention,
//! * per-pixel map `n x 1 x h x w` (broadcast over every channel), used by
//!   spatial attention.
//!
//! Only the second operand broadcasts; pass the full-size tensor first.

use std::sync::Arc;

use super::tape::{Backward, GradContrib, NodeId, Tape};
use super::{Scalar, Shape, Tensor};
use crate::error::{fmt_shape, Error, Result};

/// How the second operand of a binary op maps onto the first.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Broadcast {
    /// Identical shapes.
    Full,
    /// `n x c x 1 x 1`: one value per (image, channel).
    Channel,
    /// `n x 1 x h x w`: one value per (image, pixel).
    Spatial,
}

fn classify(op: &'static str, a: Shape, b: Shape) -> Result<Broadcast> {
    if b == a {
        Ok(Broadcast::Full)
    } else if b == Shape::new(a.n, a.c, 1, 1) {
        Ok(Broadcast::Channel)
    } else if b == Shape::new(a.n, 1, a.h, a.w) {
        Ok(Broadcast::Spatial)
    } else {
        Err(Error::shape(
            op,
            format!(
                "cannot broadcast {} onto {} (expected equal, {}x{}x1x1, or {}x1x{}x{})",
                fmt_shape(b),
                fmt_shape(a),
                a.n,
                a.c,
                a.n,
                a.h,
                a.w
            ),
        ))
    }
}

/// Applies `f(a_elem, b_elem)` with `b` broadcast per `mode`. `a` has shape
/// `shape`; `b`'s length is implied by the mode.
fn zip_broadcast<S: Scalar>(
    ad: &[S],
    bd: &[S],
    shape: Shape,
    mode: Broadcast,
    f: impl Fn(S, S) -> S,
) -> Vec<S> {
    let plane = shape.plane();
    let mut out = vec![S::zero(); shape.numel()];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let base = (n * shape.c + c) * plane;
            let ap = &ad[base..base + plane];
            let op = &mut out[base..base + plane];
            match mode {
                Broadcast::Full => {
                    let bp = &bd[base..base + plane];
                    for i in 0..plane {
                        op[i] = f(ap[i], bp[i]);
                    }
                }
                Broadcast::Channel => {
                    let s = bd[n * shape.c + c];
                    for i in 0..plane {
                        op[i] = f(ap[i], s);
                    }
                }
                Broadcast::Spatial => {
                    let bp = &bd[n * plane..(n + 1) * plane];
                    for i in 0..plane {
                        op[i] = f(ap[i], bp[i]);
                    }
                }
            }
        }
    }
    out
}

/// Sums `contrib` (shaped like `a`) down to the broadcast operand's shape.
fn reduce_to_broadcast<S: Scalar>(contrib: &[S], a: Shape, mode: Broadcast) -> Vec<S> {
    let plane = a.plane();
    match mode {
        Broadcast::Full => contrib.to_vec(),
        Broadcast::Channel => {
            let mut out = vec![S::zero(); a.n * a.c];
            for (nc, slot) in out.iter_mut().enumerate() {
                let base = nc * plane;
                let mut acc = S::zero();
                for v in &contrib[base..base + plane] {
                    acc = acc + *v;
                }
                *slot = acc;
            }
            out
        }
        Broadcast::Spatial => {
            let mut out = vec![S::zero(); a.n * plane];
            for n in 0..a.n {
                let op = &mut out[n * plane..(n + 1) * plane];
                for c in 0..a.c {
                    let base = (n * a.c + c) * plane;
                    let cp = &contrib[base..base + plane];
                    for i in 0..plane {
                        op[i] = op[i] + cp[i];
                    }
                }
            }
            out
        }
    }
}

struct AddBackward {
    a: Option<NodeId>,
    b: Option<NodeId>,
    a_shape: Shape,
    mode: Broadcast,
}

impl<S: Scalar> Backward<S> for AddBackward {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let mut out = Vec::new();
        if let Some(a) = self.a {
            out.push((a, grad_out.to_vec()));
        }
        if let Some(b) = self.b {
            out.push((b, reduce_to_broadcast(grad_out, self.a_shape, self.mode)));
        }
        out
    }
}

/// `a + broadcast(b)`.
pub fn add<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let mode = classify("add", a.shape(), b.shape())?;
    let out = Tensor::from_parts(
        a.shape(),
        zip_broadcast(a.data(), b.data(), a.shape(), mode, |x, y| x + y),
    );
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if na.is_some() || nb.is_some() {
        tape.record(
            &out,
            Box::new(AddBackward {
                a: na,
                b: nb,
                a_shape: a.shape(),
                mode,
            }),
        );
    }
    Ok(out)
}

struct MulBackward<S: Scalar> {
    a: Option<NodeId>,
    b: Option<NodeId>,
    a_data: Arc<Vec<S>>,
    b_data: Arc<Vec<S>>,
    a_shape: Shape,
    mode: Broadcast,
}

impl<S: Scalar> Backward<S> for MulBackward<S> {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let mut out = Vec::new();
        if let Some(a) = self.a {
            // d/da = g * broadcast(b)
            out.push((
                a,
                zip_broadcast(grad_out, &self.b_data, self.a_shape, self.mode, |g, bv| {
                    g * bv
                }),
            ));
        }
        if let Some(b) = self.b {
            // d/db = reduce(g * a)
            let scaled: Vec<S> = grad_out
                .iter()
                .zip(self.a_data.iter())
                .map(|(&g, &av)| g * av)
                .collect();
            out.push((b, reduce_to_broadcast(&scaled, self.a_shape, self.mode)));
        }
        out
    }
}

/// `a * broadcast(b)` (Hadamard product with optional broadcast).
pub fn mul<S: Scalar>(tape: &mut Tape<S>, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let mode = classify("mul", a.shape(), b.shape())?;
    let out = Tensor::from_parts(
        a.shape(),
        zip_broadcast(a.data(), b.data(), a.shape(), mode, |x, y| x * y),
    );
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if na.is_some() || nb.is_some() {
        tape.record(
            &out,
            Box::new(MulBackward {
                a: na,
                b: nb,
                a_data: a.buffer(),
                b_data: b.buffer(),
                a_shape: a.shape(),
                mode,
            }),
        );
    }
    Ok(out)
}

struct ScalarMulBackward<S: Scalar> {
    x: Option<NodeId>,
    k: S,
}

impl<S: Scalar> Backward<S> for ScalarMulBackward<S> {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        match self.x {
            Some(x) => vec![(x, grad_out.iter().map(|&g| g * self.k).collect())],
            None => vec![],
        }
    }
}

/// `k * x` for a plain scalar constant `k`.
pub fn scalar_mul<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>, k: S) -> Tensor<S> {
    let out = Tensor::from_parts(x.shape(), x.data().iter().map(|&v| v * k).collect());
    if let Some(nx) = tape.node_of(x) {
        tape.record(&out, Box::new(ScalarMulBackward { x: Some(nx), k }));
    }
    out
}

struct ConcatBackward {
    a: Option<NodeId>,
    b: Option<NodeId>,
    n: usize,
    a_chunk: usize,
    b_chunk: usize,
}

impl<S: Scalar> Backward<S> for ConcatBackward {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let stride = self.a_chunk + self.b_chunk;
        let mut out = Vec::new();
        if let Some(a) = self.a {
            let mut ga = Vec::with_capacity(self.n * self.a_chunk);
            for n in 0..self.n {
                ga.extend_from_slice(&grad_out[n * stride..n * stride + self.a_chunk]);
            }
            out.push((a, ga));
        }
        if let Some(b) = self.b {
            let mut gb = Vec::with_capacity(self.n * self.b_chunk);
            for n in 0..self.n {
                gb.extend_from_slice(&grad_out[n * stride + self.a_chunk..(n + 1) * stride]);
            }
            out.push((b, gb));
        }
        out
    }
}

/// Concatenates along the channel axis: `(n, ca, h, w) ++ (n, cb, h, w)
/// -> (n, ca+cb, h, w)`, with `a`'s channels first.
pub fn concat_channels<S: Scalar>(
    tape: &mut Tape<S>,
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::shape(
            "concat_channels",
            format!(
                "{} and {} differ outside the channel axis",
                fmt_shape(sa),
                fmt_shape(sb)
            ),
        ));
    }
    let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let plane = sa.plane();
    let (a_chunk, b_chunk) = (sa.c * plane, sb.c * plane);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * a_chunk..(n + 1) * a_chunk]);
        data.extend_from_slice(&b.data()[n * b_chunk..(n + 1) * b_chunk]);
    }
    let out = Tensor::from_parts(out_shape, data);
    let (na, nb) = (tape.node_of(a), tape.node_of(b));
    if na.is_some() || nb.is_some() {
        tape.record(
            &out,
            Box::new(ConcatBackward {
                a: na,
                b: nb,
                n: sa.n,
                a_chunk,
                b_chunk,
            }),
        );
    }
    Ok(out)
}

struct SumBackward {
    x: Option<NodeId>,
    numel: usize,
}

impl<S: Scalar> Backward<S> for SumBackward {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        match self.x {
            Some(x) => vec![(x, vec![grad_out[0]; self.numel])],
            None => vec![],
        }
    }
}

/// Sum of all elements, as a scalar tensor. Accumulates left to right in
/// flat index order.
pub fn sum<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let mut acc = S::zero();
    for &v in x.data() {
        acc = acc + v;
    }
    let out = Tensor::scalar(acc);
    if let Some(nx) = tape.node_of(x) {
        tape.record(
            &out,
            Box::new(SumBackward {
                x: Some(nx),
                numel: x.numel(),
            }),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t<S: Scalar>(shape: Shape, v: &[f64]) -> Tensor<S> {
        Tensor::new(shape, v.iter().map(|&x| S::from_f64(x)).collect()).unwrap()
    }

    #[test]
    fn add_full_channel_spatial() {
        let mut tape = Tape::<f64>::disabled();
        let a = t(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]);

        let full = add(&mut tape, &a, &t(Shape::new(1, 2, 1, 2), &[10., 20., 30., 40.])).unwrap();
        assert_eq!(full.data(), &[11.0, 22.0, 33.0, 44.0]);

        let chan = add(&mut tape, &a, &t(Shape::new(1, 2, 1, 1), &[100., 200.])).unwrap();
        assert_eq!(chan.data(), &[101.0, 102.0, 203.0, 204.0]);

        let spat = add(&mut tape, &a, &t(Shape::new(1, 1, 1, 2), &[0.5, -0.5])).unwrap();
        assert_eq!(spat.data(), &[1.5, 1.5, 3.5, 3.5]);
    }

    #[test]
    fn add_with_zeros_is_identity_and_mul_with_ones_is_identity() {
        let mut tape = Tape::<f32>::disabled();
        let a = t::<f32>(Shape::new(2, 1, 1, 2), &[1.5, -2.5, 0.25, 9.0]);
        let z = Tensor::zeros(a.shape());
        assert_eq!(add(&mut tape, &a, &z).unwrap().data(), a.data());
        let ones = Tensor::full(Shape::new(2, 1, 1, 1), 1.0f32);
        assert_eq!(mul(&mut tape, &a, &ones).unwrap().data(), a.data());
    }

    #[test]
    fn broadcast_rejects_incompatible_shapes() {
        let mut tape = Tape::<f32>::disabled();
        let a = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2));
        let b = Tensor::<f32>::zeros(Shape::new(1, 2, 2, 1));
        let err = add(&mut tape, &a, &b).unwrap_err();
        assert!(err.to_string().contains("broadcast"), "got: {err}");
    }

    #[test]
    fn mul_gradients_respect_broadcast_reduction() {
        // a: 1x2x1x2, b: per-channel 1x2x1x1. loss = sum(a*b).
        // dloss/da = broadcast(b); dloss/db = per-channel sums of a.
        let mut tape = Tape::<f64>::new();
        let a = t::<f64>(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]).with_grad();
        let b = t::<f64>(Shape::new(1, 2, 1, 1), &[5.0, 7.0]).with_grad();
        tape.watch(&a);
        tape.watch(&b);
        let prod = mul(&mut tape, &a, &b).unwrap();
        let loss = sum(&mut tape, &prod);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&a).unwrap(), &[5.0, 5.0, 7.0, 7.0]);
        assert_eq!(tape.grad(&b).unwrap(), &[3.0, 7.0]);
    }

    #[test]
    fn spatial_mul_gradient_sums_over_channels() {
        let mut tape = Tape::<f64>::new();
        let a = t::<f64>(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]).with_grad();
        let m = t::<f64>(Shape::new(1, 1, 1, 2), &[0.5, 2.0]).with_grad();
        tape.watch(&a);
        tape.watch(&m);
        let prod = mul(&mut tape, &a, &m).unwrap();
        let loss = sum(&mut tape, &prod);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&a).unwrap(), &[0.5, 2.0, 0.5, 2.0]);
        // dm = sum over channels of a at each pixel: [1+3, 2+4].
        assert_eq!(tape.grad(&m).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn concat_layout_and_gradient_split() {
        let mut tape = Tape::<f64>::new();
        let a = t::<f64>(Shape::new(2, 1, 1, 2), &[1.0, 2.0, 5.0, 6.0]).with_grad();
        let b = t::<f64>(Shape::new(2, 2, 1, 2), &[3.0, 4.0, 30.0, 40.0, 7.0, 8.0, 70.0, 80.0])
            .with_grad();
        tape.watch(&a);
        tape.watch(&b);
        let cat = concat_channels(&mut tape, &a, &b).unwrap();
        assert_eq!(cat.shape(), Shape::new(2, 3, 1, 2));
        // Per image: a's channel first, then b's channels.
        assert_eq!(
            cat.data(),
            &[1.0, 2.0, 3.0, 4.0, 30.0, 40.0, 5.0, 6.0, 7.0, 8.0, 70.0, 80.0]
        );
        let loss = sum(&mut tape, &cat);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&a).unwrap(), &[1.0; 4]);
        assert_eq!(tape.grad(&b).unwrap(), &[1.0; 8]);
    }

    #[test]
    fn concat_then_split_recovers_inputs() {
        let mut tape = Tape::<f32>::disabled();
        let a = t::<f32>(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]);
        let b = t::<f32>(Shape::new(1, 1, 1, 2), &[9.0, 8.0]);
        let cat = concat_channels(&mut tape, &a, &b).unwrap();
        let plane = 2;
        let (front, back) = cat.data().split_at(a.shape().c * plane);
        assert_eq!(front, a.data());
        assert_eq!(back, b.data());
    }

    #[test]
    fn scalar_mul_scales_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = t::<f64>(Shape::new(1, 1, 1, 2), &[3.0, -1.0]).with_grad();
        tape.watch(&x);
        let y = scalar_mul(&mut tape, &x, -2.0);
        assert_eq!(y.data(), &[-6.0, 2.0]);
        let loss = sum(&mut tape, &y);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[-2.0, -2.0]);
    }
}
