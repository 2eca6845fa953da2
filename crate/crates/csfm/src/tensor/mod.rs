//! Dense NCHW tensors and reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, cheaply clonable handle (shape + shared
//! buffer). Differentiable operations are free functions that take a
//! [`Tape`]; when the tape is recording and at least one operand is tracked,
//! the op registers a backward closure. [`Tape::backward`] then walks the
//! recorded graph in reverse creation order and accumulates gradients with a
//! fixed, deterministic ordering.

mod elementwise;
mod gradcheck;
mod tape;

pub use elementwise::{add, concat_channels, mul, scalar_mul, sum};
pub use gradcheck::{finite_diff_grad, GradCheckReport};
pub use tape::{NodeId, Tape};
pub(crate) use tape::{Backward, GradContrib};

use std::fmt;
use std::sync::Arc;

use crate::error::{fmt_shape, Error, Result};

/// Floating-point element type for tensors.
///
/// Implemented for `f32` (the standard precision used for training and
/// inference) and `f64` (a wide precision used by gradient checks, where
/// finite-difference noise at `f32` would swamp the comparison).
pub trait Scalar:
    num_traits::Float + num_traits::NumCast + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Short name used in messages ("f32"/"f64").
    const NAME: &'static str;

    /// Lossy conversion from `f64` (used for constants and casts).
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite f64 converts to scalar")
    }

    /// Widening conversion to `f64`. (Named to avoid clashing with
    /// `num_traits::ToPrimitive::to_f64`.)
    fn as_f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// Logical shape of a rank-4 tensor: batch x channels x height x width.
///
/// Data is stored row-major in exactly this nesting order (w fastest).
/// Vectors that are conceptually lower-rank use size-1 axes (a per-channel
/// bias is `1 x c x 1 x 1`, a scalar is `1 x 1 x 1 x 1`).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a scalar tensor.
    pub fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    /// Total number of elements.
    pub fn numel(self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat offset of element `(n, c, h, w)`.
    #[inline(always)]
    pub fn index(self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    /// Number of elements in one image plane (h * w).
    pub fn plane(self) -> usize {
        self.h * self.w
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A rank-4 tensor with shared, immutable storage.
///
/// Cloning is O(1) and aliases the buffer; [`Tensor::data_mut`] performs
/// copy-on-write, so handing a tensor to the tape (which pins the buffer)
/// never lets a later in-place update corrupt recorded history.
#[derive(Clone)]
pub struct Tensor<S: Scalar> {
    shape: Shape,
    data: Arc<Vec<S>>,
    requires_grad: bool,
}

impl<S: Scalar> Tensor<S> {
    /// Wraps `data` with the given shape. Errors if the length disagrees.
    pub fn new(shape: Shape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor_new",
                format!(
                    "buffer has {} elements but shape {} needs {}",
                    data.len(),
                    fmt_shape(shape),
                    shape.numel()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
        })
    }

    /// All-zeros tensor.
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![S::zero(); shape.numel()]),
            requires_grad: false,
        }
    }

    /// Constant-filled tensor.
    pub fn full(shape: Shape, v: S) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![v; shape.numel()]),
            requires_grad: false,
        }
    }

    /// 1x1x1x1 tensor holding `v`.
    pub fn scalar(v: S) -> Self {
        Tensor::full(Shape::scalar(), v)
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize) -> S) -> Self {
        let data: Vec<S> = (0..shape.numel()).map(|i| f(i)).collect();
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
        }
    }

    /// Internal constructor for op outputs (length must already match).
    pub(crate) fn from_parts(shape: Shape, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    /// Read-only view of the buffer in NCHW row-major order.
    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Mutable view; clones the buffer first if it is aliased elsewhere.
    pub fn data_mut(&mut self) -> &mut [S] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Marks this tensor as a differentiable leaf (used by [`Tape::watch`]).
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Value of a 1-element tensor.
    ///
    /// Panics on non-scalar shapes; callers only reach this through ops that
    /// are defined to produce scalars (sums, losses).
    pub fn item(&self) -> S {
        assert!(
            self.numel() == 1,
            "item() on non-scalar tensor of shape {}",
            self.shape
        );
        self.data[0]
    }

    /// Element-type conversion (used to lift f32 models to f64 for
    /// wide-precision gradient checking).
    pub fn convert<T: Scalar>(&self) -> Tensor<T> {
        let data: Vec<T> = self.data.iter().map(|&v| T::from_f64(v.as_f64())).collect();
        Tensor {
            shape: self.shape,
            data: Arc::new(data),
            requires_grad: self.requires_grad,
        }
    }

    /// Identity key for tape tracking: the address of the shared buffer.
    /// Stable for the lifetime of the allocation; the tape pins every
    /// buffer it indexes, so live keys are never reused.
    pub(crate) fn ptr_key(&self) -> usize {
        Arc::as_ptr(&self.data) as *const u8 as usize
    }

    /// Clone of the buffer handle (for backward closures and the tape pin).
    pub(crate) fn buffer(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.data)
    }

    /// True if every element is finite. Ops deliberately let overflow flow
    /// through (float semantics); callers that require finiteness — the
    /// training loop's loss check, the tape's backward entry — test with
    /// this and surface a proper error.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<String> = self.data.iter().take(4).map(|v| format!("{v}")).collect();
        write!(
            f,
            "Tensor<{}>({}, grad={}, [{}{}])",
            S::NAME,
            self.shape,
            self.requires_grad,
            preview.join(", "),
            if self.numel() > 4 { ", .." } else { "" }
        )
    }
}
