//! Separable bicubic resampling with the conventions the SR literature's
//! reference resizer uses: Keys cubic kernel `a = -0.5`, output pixel `o`
//! sampling input coordinate `(o + 0.5)/scale - 0.5`, the kernel widened by
//! `1/scale` when shrinking (antialiasing), per-pixel weights normalized to
//! sum 1, and out-of-range taps clamped to the image border (replication).
//! All arithmetic is `f64`.

use crate::error::{Error, Result};
use crate::imaging::plane::{Domain, ImagePlane};

/// Keys cubic interpolation kernel with `a = -0.5`; support `[-2, 2]`.
fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 1.0 {
        (1.5 * ax - 2.5) * ax * ax + 1.0
    } else if ax < 2.0 {
        ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    } else {
        0.0
    }
}

/// Precomputed taps for one output axis: `ntaps` input indices and weights
/// per output coordinate, flattened.
struct ResamplePlan {
    ntaps: usize,
    /// Clamped input index per (output coordinate, tap).
    indices: Vec<usize>,
    /// Normalized weight per (output coordinate, tap).
    weights: Vec<f64>,
}

impl ResamplePlan {
    fn new(in_len: usize, out_len: usize) -> ResamplePlan {
        let scale = out_len as f64 / in_len as f64;
        // Shrinking: stretch the kernel by 1/scale and compress its argument
        // so it low-pass filters (antialiases) while still summing to ~1.
        let (kscale, width) = if scale < 1.0 {
            (scale, 4.0 / scale)
        } else {
            (1.0, 4.0)
        };
        let ntaps = width.ceil() as usize + 2;
        let mut indices = Vec::with_capacity(out_len * ntaps);
        let mut weights = Vec::with_capacity(out_len * ntaps);
        for o in 0..out_len {
            let u = (o as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as i64;
            let base = weights.len();
            let mut total = 0.0;
            for t in 0..ntaps {
                let i = left + t as i64;
                let w = kscale * cubic(kscale * (u - i as f64));
                total += w;
                weights.push(w);
                indices.push(i.clamp(0, in_len as i64 - 1) as usize);
            }
            for w in &mut weights[base..] {
                *w /= total;
            }
        }
        ResamplePlan {
            ntaps,
            indices,
            weights,
        }
    }

    /// Resamples one logical row stored at stride `stride` starting at
    /// `offset` in `src`, writing `out_len` values the same way into `dst`.
    fn apply(&self, src: &[f64], s_off: usize, s_stride: usize, dst: &mut [f64], d_off: usize, d_stride: usize) {
        let out_len = self.indices.len() / self.ntaps;
        for o in 0..out_len {
            let base = o * self.ntaps;
            let mut acc = 0.0;
            for t in 0..self.ntaps {
                acc += self.weights[base + t] * src[s_off + self.indices[base + t] * s_stride];
            }
            dst[d_off + o * d_stride] = acc;
        }
    }
}

/// Resamples `img` to `target_w` x `target_h`. Requires a float domain
/// ([`Domain::Unit`] or [`Domain::MeanCentered`], preserved in the output);
/// quantized planes must be converted with [`ImagePlane::to_unit`] first so
/// the cubic overshoot is never hidden by an implicit clip.
pub fn bicubic_resize(img: &ImagePlane, target_w: usize, target_h: usize) -> Result<ImagePlane> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Data(format!(
            "resize target must be positive, got {target_w}x{target_h}"
        )));
    }
    if img.domain() == Domain::U8Range {
        return Err(Error::Data(
            "bicubic_resize needs a float-domain plane; call to_unit() first".into(),
        ));
    }
    let (w_in, h_in) = (img.width(), img.height());
    let hplan = ResamplePlan::new(w_in, target_w);
    let vplan = ResamplePlan::new(h_in, target_h);

    // Work per channel on deinterleaved planes (simpler strides), then
    // re-interleave. Horizontal pass first, then vertical.
    let mut out = vec![0.0; 3 * target_w * target_h];
    let mut chan = vec![0.0; w_in * h_in];
    let mut mid = vec![0.0; target_w * h_in];
    let mut cols = vec![0.0; target_w * target_h];
    for c in 0..3 {
        for (i, v) in chan.iter_mut().enumerate() {
            *v = img.data()[3 * i + c];
        }
        for y in 0..h_in {
            hplan.apply(&chan, y * w_in, 1, &mut mid, y * target_w, 1);
        }
        for x in 0..target_w {
            vplan.apply(&mid, x, target_w, &mut cols, x, target_w);
        }
        for (i, v) in cols.iter().enumerate() {
            out[3 * i + c] = *v;
        }
    }
    ImagePlane::from_raw(target_w, target_h, out, img.domain(), img.color())
}
