//! Numerical gradient verification via central finite differences.
//!
//! Used by op-level unit tests (dense, every coordinate) and by the
//! whole-network check in the acceptance suite (sampled coordinates, since
//! full perturbation of every parameter would be quadratic in model size).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest absolute difference between analytic and numeric gradients.
    pub max_abs_err: f64,
    /// Largest normalized difference: `|a - n| / max(1, |a|, |n|)`.
    /// The floor of 1 makes the measure absolute for small gradients and
    /// relative for large ones, so finite-difference roundoff on tiny
    /// entries does not drown the comparison.
    pub max_norm_err: f64,
    /// Number of coordinates compared.
    pub coords_checked: usize,
    /// `(leaf index, flat element index, analytic, numeric)` of the worst
    /// coordinate by normalized error.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    fn observe(&mut self, leaf: usize, idx: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let norm = abs / analytic.abs().max(numeric.abs()).max(1.0);
        self.coords_checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if norm >= self.max_norm_err {
            self.max_norm_err = norm;
            self.worst = Some((leaf, idx, analytic, numeric));
        }
    }
}

/// Compares tape gradients of `forward` against central finite differences.
///
/// `forward` must be a pure, deterministic function from the leaves to a
/// scalar loss (it is re-run many times with perturbed copies). For each
/// leaf, up to `samples_per_leaf` distinct coordinates are drawn with the
/// seeded generator (all coordinates when the leaf is small enough), each
/// perturbed by `±step` for a central difference.
pub fn finite_diff_grad<S, F>(
    forward: F,
    leaves: &[Tensor<S>],
    samples_per_leaf: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Tensor<S>]) -> Result<Tensor<S>>,
{
    if samples_per_leaf == 0 || step <= 0.0 {
        return Err(Error::Config(
            "finite_diff_grad needs samples_per_leaf >= 1 and step > 0".into(),
        ));
    }
    let owned: Vec<Tensor<S>> = leaves.iter().map(|t| t.clone().with_grad()).collect();

    // Analytic pass.
    let mut tape = Tape::new();
    for t in &owned {
        tape.watch(t);
    }
    let loss = forward(&mut tape, &owned)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = owned
        .iter()
        .map(|t| match tape.grad(t) {
            Some(g) => g.iter().map(|v| v.as_f64()).collect(),
            // A leaf the loss does not depend on has gradient zero.
            None => vec![0.0; t.numel()],
        })
        .collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_norm_err: 0.0,
        coords_checked: 0,
        worst: None,
    };

    for (li, leaf) in owned.iter().enumerate() {
        let numel = leaf.numel();
        let coords: Vec<usize> = if numel <= samples_per_leaf {
            (0..numel).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < samples_per_leaf {
                picked.insert(rng.random_range(0..numel));
            }
            picked.into_iter().collect()
        };

        for idx in coords {
            let orig = leaf.data()[idx].as_f64();
            let eval = |value: f64| -> Result<f64> {
                let mut probe = owned.clone();
                let mut t = probe[li].clone();
                t.data_mut()[idx] = S::from_f64(value);
                probe[li] = t;
                let mut quiet = Tape::disabled();
                Ok(forward(&mut quiet, &probe)?.item().as_f64())
            };
            let plus = eval(orig + step)?;
            let minus = eval(orig - step)?;
            let numeric = (plus - minus) / (2.0 * step);
            report.observe(li, idx, analytic[li][idx], numeric);
        }
    }
    Ok(report)
}
