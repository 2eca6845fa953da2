//! Gate-weight analysis: how much each memory module draws from its own
//! block chain (short-term features) versus earlier modules' outputs
//! (long-term features), measured by per-input-column L2 norms of the 1x1
//! gate convolutions.

use crate::error::{Error, Result};
use crate::model::CsfmNetwork;
use crate::tensor::Scalar;

/// Normalized mean gate-column norms for one module.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GfModuleNorms {
    /// Mean over the first `channels` input columns (the module's own
    /// block-chain output).
    pub short_term: f64,
    /// Mean over the remaining columns (previous modules' outputs);
    /// `None` for the first module, which has no long-term inputs.
    pub long_term: Option<f64>,
}

/// Per-module short/long-term norms, normalized so the largest entry is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct GfNormReport {
    pub modules: Vec<GfModuleNorms>,
}

/// Computes the report from a network's gate convolutions.
///
/// For module `m` (1-based) the gate weight has shape
/// `(channels, m * channels, 1, 1)`; input column `n` gets the norm
/// `q_n = sqrt(sum_i W[i, n]^2)`. Columns `0..channels` are averaged into
/// the short-term entry, the rest into the long-term entry, and every
/// reported mean is divided by the global maximum so the values land in
/// `[0, 1]` with at least one exact 1.
pub fn gf_weight_norms<S: Scalar>(net: &CsfmNetwork<S>) -> Result<GfNormReport> {
    let channels = net.config().channels;
    let mut raw: Vec<(f64, Option<f64>)> = Vec::new();
    for module in net.modules() {
        let weight = module.gate().weight();
        let shape = weight.shape();
        let mut column_norms = vec![0.0_f64; shape.c];
        for oc in 0..shape.n {
            for (n, norm) in column_norms.iter_mut().enumerate() {
                let w = weight.data()[shape.index(oc, n, 0, 0)].as_f64();
                *norm += w * w;
            }
        }
        for q in &mut column_norms {
            *q = q.sqrt();
        }
        let mean = |qs: &[f64]| qs.iter().sum::<f64>() / qs.len() as f64;
        let short = mean(&column_norms[..channels]);
        let long = if shape.c > channels {
            Some(mean(&column_norms[channels..]))
        } else {
            None
        };
        raw.push((short, long));
    }
    let max = raw
        .iter()
        .flat_map(|(s, l)| std::iter::once(*s).chain(*l))
        .fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return Err(Error::Checkpoint(
            "all gate weights are zero; norms cannot be normalized".into(),
        ));
    }
    Ok(GfNormReport {
        modules: raw
            .into_iter()
            .map(|(s, l)| GfModuleNorms {
                short_term: s / max,
                long_term: l.map(|v| v / max),
            })
            .collect(),
    })
}
