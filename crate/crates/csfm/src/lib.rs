//! Single-image super-resolution engine built around residual blocks with
//! channel-wise and spatial attention, assembled into memory modules whose
//! outputs are fused by learned 1x1 "gate" convolutions.
//!
//! The crate is self-contained: it ships its own NCHW tensor type with
//! tape-based reverse-mode automatic differentiation, the convolutional
//! building blocks of the network, a deterministic training engine (L1 loss,
//! Adam, step learning-rate schedule, patch sampling with flip/rotation
//! augmentation, binary checkpoints), and the imaging side (PNG I/O, bicubic
//! resampling that reproduces the de-facto benchmark convention, PSNR/SSIM
//! on the luminance channel, and gate-weight analysis of trained models).
//!
//! Layout:
//!
//! * [`tensor`] — shapes, tensors, the gradient tape, elementwise ops.
//! * [`nn`] — convolution, activations, pooling, pixel shuffle.
//! * [`model`] — attention units, residual blocks, memory modules, the full
//!   network, and parameter accounting.
//! * [`train`] — loss, optimizer, schedule, data pipeline, checkpoints, and
//!   the training loop.
//! * [`imaging`] — image planes, resampling, metrics, and model analysis.
//!
//! All randomness goes through explicitly seeded ChaCha8 generators, and all
//! kernels reduce in a fixed order regardless of the worker-thread count, so
//! every run is bit-for-bit reproducible.

pub mod error;
pub mod imaging;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

/// Number of worker threads to use for convolution kernels.
///
/// Reads the `CSFM_THREADS` environment variable; unset, empty, `0`, or
/// unparsable values mean "use all available cores". The parallel split is
/// over disjoint output regions with a fixed per-element reduction order, so
/// the thread count never changes numerical results.
pub fn worker_threads() -> usize {
    match std::env::var("CSFM_THREADS") {
        Ok(v) => v.trim().parse::<usize>().unwrap_or(0),
        Err(_) => 0,
    }
}

/// Global worker pool honoring [`worker_threads`].
///
/// `None` when the effective width is 1; kernels then run serially on the
/// calling thread (cheaper than routing through a one-lane pool). Built on
/// first use; changing `CSFM_THREADS` afterwards has no effect.
pub(crate) fn thread_pool() -> Option<&'static rayon::ThreadPool> {
    use std::sync::OnceLock;
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = worker_threads();
        let avail = std::thread::available_parallelism()
            .map(|v| v.get())
            .unwrap_or(1);
        let width = if n == 0 { avail } else { n.min(avail) };
        if width <= 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(width)
            .build()
            .ok()
    })
    .as_ref()
}
