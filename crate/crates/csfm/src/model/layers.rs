//! Named convolution layers and weight initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::conv2d;
use crate::tensor::{Scalar, Shape, Tape, Tensor};

/// How fresh parameters are filled in.
pub enum Initializer {
    /// Zero-mean Gaussian weights with std `sqrt(2 / fan_in)`, zero biases.
    FanInGaussian(ChaCha8Rng),
    /// Everything zero; used by identity tests and checkpoint loading.
    Zeros,
}

impl Initializer {
    /// Seeded Gaussian initializer (ChaCha8 stream).
    pub fn seeded(seed: u64) -> Self {
        Initializer::FanInGaussian(ChaCha8Rng::seed_from_u64(seed))
    }

    fn weights<S: Scalar>(&mut self, fan_in: usize, len: usize) -> Vec<S> {
        match self {
            Initializer::FanInGaussian(rng) => {
                let std = (2.0 / fan_in as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("std is finite and positive");
                (0..len).map(|_| S::from_f64(dist.sample(rng))).collect()
            }
            Initializer::Zeros => vec![S::zero(); len],
        }
    }
}

/// A 2-D convolution layer: weight `(c_out, c_in, k, k)`, bias, fixed
/// padding, and a unique name used for checkpoints and gradient lookup.
pub struct Conv<S: Scalar> {
    name: String,
    weight: Tensor<S>,
    bias: Tensor<S>,
    pad: usize,
}

impl<S: Scalar> Conv<S> {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        pad: usize,
        init: &mut Initializer,
    ) -> Self {
        let weight = Tensor::from_parts(
            Shape::new(c_out, c_in, k, k),
            init.weights(c_in * k * k, c_out * c_in * k * k),
        )
        .with_grad();
        let bias = Tensor::zeros(Shape::new(1, c_out, 1, 1)).with_grad();
        Conv {
            name: name.into(),
            weight,
            bias,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        conv2d(tape, x, &self.weight, &self.bias, self.pad)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weight(&self) -> &Tensor<S> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<S> {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<S> {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<S> {
        &mut self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    /// Weight scalars + bias scalars.
    pub fn num_scalars(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    /// Visits `(name, tensor)` for the weight then the bias.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<S>)) {
        f(&format!("{}.weight", self.name), &self.weight);
        f(&format!("{}.bias", self.name), &self.bias);
    }

    /// Mutable visit in the same order as [`Conv::visit`].
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<S>)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

/// Scalar count of one conv layer: `c_in*c_out*k*k` weights plus `c_out`
/// biases. Shared by the analytic model enumeration and tests.
pub fn conv_scalars(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k + c_out
}
