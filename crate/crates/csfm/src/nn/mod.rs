//! Neural-network primitives on top of the tensor/tape layer: convolution,
//! ReLU, logistic sigmoid, global average pooling, and pixel shuffle.

mod conv;

pub use conv::conv2d;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Backward, GradContrib, NodeId, Scalar, Shape, Tape, Tensor};

struct ReluBackward<S: Scalar> {
    x_node: NodeId,
    out: Arc<Vec<S>>,
}

impl<S: Scalar> Backward<S> for ReluBackward<S> {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let g = grad_out
            .iter()
            .zip(self.out.iter())
            .map(|(&g, &y)| if y > S::zero() { g } else { S::zero() })
            .collect();
        vec![(self.x_node, g)]
    }
}

/// Rectified linear unit, `max(0, x)`. The subgradient at exactly zero is
/// taken as zero.
pub fn relu<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let out = Tensor::from_parts(
        x.shape(),
        x.data()
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect(),
    );
    if let Some(xn) = tape.node_of(x) {
        let saved = out.buffer();
        tape.record(
            &out,
            Box::new(ReluBackward {
                x_node: xn,
                out: saved,
            }),
        );
    }
    out
}

struct SigmoidBackward<S: Scalar> {
    x_node: NodeId,
    out: Arc<Vec<S>>,
}

impl<S: Scalar> Backward<S> for SigmoidBackward<S> {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let g = grad_out
            .iter()
            .zip(self.out.iter())
            .map(|(&g, &y)| g * y * (S::one() - y))
            .collect();
        vec![(self.x_node, g)]
    }
}

/// Logistic sigmoid `1 / (1 + exp(-x))`, evaluated in a form that never
/// exponentiates a positive argument (no overflow for large |x|).
pub fn sigmoid<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let one = S::one();
    let out = Tensor::from_parts(
        x.shape(),
        x.data()
            .iter()
            .map(|&v| {
                if v >= S::zero() {
                    one / (one + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (one + e)
                }
            })
            .collect(),
    );
    if let Some(xn) = tape.node_of(x) {
        let saved = out.buffer();
        tape.record(
            &out,
            Box::new(SigmoidBackward {
                x_node: xn,
                out: saved,
            }),
        );
    }
    out
}

struct GapBackward {
    x_node: NodeId,
    x_shape: Shape,
}

impl<S: Scalar> Backward<S> for GapBackward {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let plane = self.x_shape.plane();
        let inv = S::one() / S::from_f64(plane as f64);
        let mut dx = vec![S::zero(); self.x_shape.numel()];
        for (nc, &g) in grad_out.iter().enumerate() {
            let v = g * inv;
            for slot in &mut dx[nc * plane..(nc + 1) * plane] {
                *slot = v;
            }
        }
        vec![(self.x_node, dx)]
    }
}

/// Global average pooling: `(n, c, h, w) -> (n, c, 1, 1)`, the spatial mean
/// of each channel. Sums in row-major order, then divides once.
pub fn global_avg_pool<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>) -> Tensor<S> {
    let s = x.shape();
    let plane = s.plane();
    let inv = S::one() / S::from_f64(plane as f64);
    let mut out = Vec::with_capacity(s.n * s.c);
    for nc in 0..s.n * s.c {
        let mut acc = S::zero();
        for v in &x.data()[nc * plane..(nc + 1) * plane] {
            acc = acc + *v;
        }
        out.push(acc * inv);
    }
    let out = Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), out);
    if let Some(xn) = tape.node_of(x) {
        tape.record(
            &out,
            Box::new(GapBackward {
                x_node: xn,
                x_shape: s,
            }),
        );
    }
    out
}

/// Flat index mapping of pixel shuffle: output `(n, oc, oy, ox)` reads input
/// `(n, oc*s*s + (oy%s)*s + (ox%s), oy/s, ox/s)`.
fn shuffle_source(in_shape: Shape, s: usize, n: usize, oc: usize, oy: usize, ox: usize) -> usize {
    let ic = oc * s * s + (oy % s) * s + (ox % s);
    in_shape.index(n, ic, oy / s, ox / s)
}

struct ShuffleBackward {
    x_node: NodeId,
    x_shape: Shape,
    out_shape: Shape,
    s: usize,
}

impl<S: Scalar> Backward<S> for ShuffleBackward {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        // Pure permutation: scatter each output gradient back to its source.
        let o = self.out_shape;
        let mut dx = vec![S::zero(); self.x_shape.numel()];
        let mut flat = 0;
        for n in 0..o.n {
            for oc in 0..o.c {
                for oy in 0..o.h {
                    for ox in 0..o.w {
                        dx[shuffle_source(self.x_shape, self.s, n, oc, oy, ox)] = grad_out[flat];
                        flat += 1;
                    }
                }
            }
        }
        vec![(self.x_node, dx)]
    }
}

/// Sub-pixel rearrangement: `(n, c, h, w) -> (n, c/s^2, h*s, w*s)`.
///
/// Each group of `s*s` consecutive input channels becomes one output channel;
/// within a group, channel `dy*s + dx` supplies the output pixels at offset
/// `(dy, dx)` inside each `s x s` cell. Requires `c % s^2 == 0`.
pub fn pixel_shuffle<S: Scalar>(tape: &mut Tape<S>, x: &Tensor<S>, s: usize) -> Result<Tensor<S>> {
    if s == 0 {
        return Err(Error::Config("pixel_shuffle factor must be >= 1".into()));
    }
    let xs = x.shape();
    if xs.c % (s * s) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by {}^2", xs.c, s),
        ));
    }
    let out_shape = Shape::new(xs.n, xs.c / (s * s), xs.h * s, xs.w * s);
    let xd = x.data();
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..out_shape.n {
        for oc in 0..out_shape.c {
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    out.push(xd[shuffle_source(xs, s, n, oc, oy, ox)]);
                }
            }
        }
    }
    let out = Tensor::from_parts(out_shape, out);
    if let Some(xn) = tape.node_of(x) {
        tape.record(
            &out,
            Box::new(ShuffleBackward {
                x_node: xn,
                x_shape: xs,
                out_shape,
                s,
            }),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, sum};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn<S: Scalar>(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> Tensor<S> {
        Tensor::from_fn(shape, |_| {
            S::from_f64((rng.random::<f64>() * 2.0 - 1.0) * scale)
        })
    }

    /// Textbook quadruple-loop convolution used as the test oracle: pads the
    /// input explicitly and reduces per output element over (ic, ky, kx).
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        pad: usize,
    ) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let (h_out, w_out) = (xs.h + 2 * pad - ws.h + 1, xs.w + 2 * pad - ws.w + 1);
        let out_shape = Shape::new(xs.n, ws.n, h_out, w_out);
        let mut out = vec![0.0; out_shape.numel()];
        for n in 0..xs.n {
            for oc in 0..ws.n {
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut acc = b.data()[oc];
                        for ic in 0..xs.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let (iy, ix) = (oy + ky, ox + kx);
                                    if iy < pad || ix < pad {
                                        continue;
                                    }
                                    let (iy, ix) = (iy - pad, ix - pad);
                                    if iy >= xs.h || ix >= xs.w {
                                        continue;
                                    }
                                    acc += w.data()[ws.index(oc, ic, ky, kx)]
                                        * x.data()[xs.index(n, ic, iy, ix)];
                                }
                            }
                        }
                        out[out_shape.index(n, oc, oy, ox)] = acc;
                    }
                }
            }
        }
        Tensor::new(out_shape, out).unwrap()
    }

    #[test]
    fn conv_matches_oracle_over_shape_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            // (n, c_in, h, w, c_out, k, pad)
            (1, 1, 5, 5, 1, 3, 1),
            (2, 3, 4, 6, 5, 3, 1),
            (1, 4, 3, 3, 2, 1, 0),
            (2, 2, 7, 5, 3, 3, 0),
            (1, 2, 2, 2, 3, 3, 2),
            (1, 1, 1, 1, 1, 3, 1),
        ];
        for &(n, ci, h, w, co, k, pad) in &cases {
            let x = randn::<f64>(&mut rng, Shape::new(n, ci, h, w), 1.0);
            let wt = randn::<f64>(&mut rng, Shape::new(co, ci, k, k), 0.5);
            let b = randn::<f64>(&mut rng, Shape::new(1, co, 1, 1), 0.2);
            let mut tape = Tape::disabled();
            let got = conv2d(&mut tape, &x, &wt, &b, pad).unwrap();
            let want = conv_oracle(&x, &wt, &b, pad);
            assert_eq!(got.shape(), want.shape(), "case {:?}", (n, ci, h, w, co, k, pad));
            for (i, (a, e)) in got.data().iter().zip(want.data()).enumerate() {
                assert!(
                    (a - e).abs() <= 1e-12 * e.abs().max(1.0),
                    "case {:?} elem {}: {} vs {}",
                    (n, ci, h, w, co, k, pad),
                    i,
                    a,
                    e
                );
            }
        }
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        // 3x3 kernel with a centered 1 and pad 1 is the identity map.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn::<f32>(&mut rng, Shape::new(2, 3, 6, 5), 2.0);
        let mut w = Tensor::<f32>::zeros(Shape::new(3, 3, 3, 3));
        let ws = w.shape();
        for c in 0..3 {
            w.data_mut()[ws.index(c, c, 1, 1)] = 1.0;
        }
        let b = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        let mut tape = Tape::disabled();
        let y = conv2d(&mut tape, &x, &w, &b, 1).unwrap();
        assert_eq!(y.data(), x.data(), "delta kernel must copy exactly");
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut tape = Tape::<f32>::disabled();
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape::new(3, 5, 3, 3)); // wrong c_in
        let b = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert!(conv2d(&mut tape, &x, &w, &b, 1).is_err());

        let w = Tensor::zeros(Shape::new(3, 2, 3, 3));
        let bad_b = Tensor::zeros(Shape::new(1, 4, 1, 1));
        assert!(conv2d(&mut tape, &x, &w, &bad_b, 1).is_err());

        let huge_k = Tensor::zeros(Shape::new(1, 2, 9, 9));
        let b1 = Tensor::zeros(Shape::new(1, 1, 1, 1));
        assert!(conv2d(&mut tape, &x, &huge_k, &b1, 1).is_err());
    }

    #[test]
    fn conv_gradients_check_densely() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(pad, k) in &[(1usize, 3usize), (0, 1), (0, 3), (2, 3)] {
            let x = randn::<f64>(&mut rng, Shape::new(2, 2, 4, 4), 1.0);
            let w = randn::<f64>(&mut rng, Shape::new(3, 2, k, k), 0.6);
            let b = randn::<f64>(&mut rng, Shape::new(1, 3, 1, 1), 0.3);
            let report = finite_diff_grad(
                move |tape, leaves| {
                    let y = conv2d(tape, &leaves[0], &leaves[1], &leaves[2], pad)?;
                    // Weight the sum so gradients differ per position.
                    let m = Tensor::from_fn(y.shape(), |i| 0.01 * i as f64 - 0.4);
                    let weighted = crate::tensor::mul(tape, &y, &m)?;
                    Ok(sum(tape, &weighted))
                },
                &[x, w, b],
                1_000,
                1e-5,
                5,
            )
            .unwrap();
            assert!(
                report.max_norm_err < 1e-8,
                "pad={pad} k={k}: {report:?}"
            );
        }
    }

    #[test]
    fn relu_forward_and_gradient() {
        let x = Tensor::<f64>::new(
            Shape::new(1, 1, 1, 5),
            vec![-2.0, -0.0, 0.0, 0.5, 3.0],
        )
        .unwrap();
        let mut tape = Tape::disabled();
        let y = relu(&mut tape, &x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 0.5, 3.0]);

        // Gradient: 0 for negatives and at exactly 0, pass-through above.
        let x = x.with_grad();
        let mut tape = Tape::new();
        tape.watch(&x);
        let y = relu(&mut tape, &x);
        let loss = sum(&mut tape, &y);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_is_stable_and_checks() {
        let x = Tensor::<f64>::new(
            Shape::new(1, 1, 1, 5),
            vec![-200.0, -1.0, 0.0, 1.0, 200.0],
        )
        .unwrap();
        let mut tape = Tape::disabled();
        let y = sigmoid(&mut tape, &x);
        assert!(y.data()[0] >= 0.0 && y.data()[0] < 1e-80, "no underflow to junk");
        assert!((y.data()[2] - 0.5).abs() < 1e-15);
        assert!((y.data()[4] - 1.0).abs() < 1e-15);
        assert!((y.data()[1] + y.data()[3] - 1.0).abs() < 1e-15, "symmetry");

        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 2), |i| 0.7 * i as f64 - 2.0);
        let report = finite_diff_grad(
            |tape, leaves| {
                let y = sigmoid(tape, &leaves[0]);
                Ok(sum(tape, &y))
            },
            &[x],
            64,
            1e-6,
            2,
        )
        .unwrap();
        assert!(report.max_norm_err < 1e-9, "{report:?}");
    }

    #[test]
    fn global_avg_pool_means_and_gradient() {
        let x = Tensor::<f64>::new(
            Shape::new(1, 2, 2, 2),
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
        )
        .unwrap()
        .with_grad();
        let mut tape = Tape::new();
        tape.watch(&x);
        let y = global_avg_pool(&mut tape, &x);
        assert_eq!(y.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(y.data(), &[2.5, 25.0]);
        let loss = sum(&mut tape, &y);
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), &[0.25; 8]);
    }

    #[test]
    fn pixel_shuffle_places_subchannels_on_the_grid() {
        // One output channel from 4 input channels, s=2, 2x2 input.
        // Encode each value as 100*c + 10*y + x of its input position.
        let shape = Shape::new(1, 4, 2, 2);
        let x = Tensor::<f32>::from_fn(shape, |i| {
            let c = i / 4;
            let y = (i / 2) % 2;
            let xpos = i % 2;
            (100 * c + 10 * y + xpos) as f32
        });
        let mut tape = Tape::disabled();
        let y = pixel_shuffle(&mut tape, &x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        // Output cell (oy, ox) holds channel (oy%2)*2 + ox%2 at (oy/2, ox/2).
        #[rustfmt::skip]
        let want = [
            0.0, 100.0, 1.0, 101.0,
            200.0, 300.0, 201.0, 301.0,
            10.0, 110.0, 11.0, 111.0,
            210.0, 310.0, 211.0, 311.0,
        ];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn pixel_shuffle_gradient_is_the_inverse_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = randn::<f64>(&mut rng, Shape::new(2, 8, 3, 2), 1.0);
        let report = finite_diff_grad(
            |tape, leaves| {
                let y = pixel_shuffle(tape, &leaves[0], 2)?;
                let m = Tensor::from_fn(y.shape(), |i| (i % 7) as f64 - 3.0);
                let weighted = crate::tensor::mul(tape, &y, &m)?;
                Ok(sum(tape, &weighted))
            },
            &[x],
            200,
            1e-6,
            4,
        )
        .unwrap();
        assert!(report.max_norm_err < 1e-8, "{report:?}");
    }

    #[test]
    fn pixel_shuffle_rejects_non_divisible_channels() {
        let mut tape = Tape::<f32>::disabled();
        let x = Tensor::zeros(Shape::new(1, 6, 2, 2));
        assert!(pixel_shuffle(&mut tape, &x, 2).is_err());
        assert!(pixel_shuffle(&mut tape, &x, 0).is_err());
    }
}
