//! Adam optimizer with bias-corrected moments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::CsfmNetwork;
use crate::tensor::Scalar;
use crate::train::schedule::LrSchedule;

/// Gradients keyed by parameter name, as extracted from a tape.
pub type GradMap<S> = BTreeMap<String, Vec<S>>;

struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
}

/// Optimizer state: per-parameter first/second moment estimates plus the
/// update counter. Moments are stored in the parameter precision so a
/// checkpoint round-trip is bitwise; the update arithmetic runs in `f64`.
pub struct Adam<S: Scalar> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    moments: BTreeMap<String, Moments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Result<Adam<S>> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!(
                "moment decays must lie in [0, 1), got beta1={beta1} beta2={beta2}"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        Ok(Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of updates applied so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Applies one update to every parameter of `net`, reading the learning
    /// rate for the new step from `schedule`. Every parameter must have an
    /// entry in `grads` of matching length. Returns the rate used.
    pub fn step(
        &mut self,
        schedule: &LrSchedule,
        net: &mut CsfmNetwork<S>,
        grads: &GradMap<S>,
    ) -> Result<f64> {
        // Validate everything first so a failure leaves the parameters and
        // the step counter untouched.
        let mut failure: Option<Error> = None;
        net.for_each_param(&mut |name, tensor| {
            if failure.is_some() {
                return;
            }
            match grads.get(name) {
                Some(g) if g.len() == tensor.numel() => {}
                Some(g) => {
                    failure = Some(Error::Autodiff(format!(
                        "gradient for {name} has {} values, parameter has {}",
                        g.len(),
                        tensor.numel()
                    )));
                }
                None => {
                    failure = Some(Error::Autodiff(format!(
                        "no gradient recorded for parameter {name}"
                    )));
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        self.t += 1;
        let lr = schedule.lr_at(self.t);
        net.for_each_param_mut(&mut |name, tensor| {
            let grad = &grads[name];
            let slot = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![S::zero(); tensor.numel()],
                v: vec![S::zero(); tensor.numel()],
            });
            update_slice(
                tensor.data_mut(),
                grad,
                &mut slot.m,
                &mut slot.v,
                self.t,
                lr,
                self.beta1,
                self.beta2,
                self.eps,
            );
        });
        Ok(lr)
    }

    /// Stored moments for `name` (zeros are materialized only on first
    /// update, so a never-updated parameter returns `None`).
    pub(crate) fn moments_of(&self, name: &str) -> Option<(&[S], &[S])> {
        self.moments
            .get(name)
            .map(|mm| (mm.m.as_slice(), mm.v.as_slice()))
    }

    /// Rebuilds optimizer state from a checkpoint.
    pub(crate) fn restore(
        beta1: f64,
        beta2: f64,
        eps: f64,
        t: u64,
        slots: Vec<(String, Vec<S>, Vec<S>)>,
    ) -> Result<Adam<S>> {
        let mut adam = Adam::new(beta1, beta2, eps)?;
        adam.t = t;
        for (name, m, v) in slots {
            adam.moments.insert(name, Moments { m, v });
        }
        Ok(adam)
    }
}

/// The standard bias-corrected update, applied elementwise in `f64`:
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// `theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
#[allow(clippy::too_many_arguments)]
fn update_slice<S: Scalar>(
    theta: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i].as_f64();
        let mi = beta1 * m[i].as_f64() + (1.0 - beta1) * g;
        let vi = beta2 * v[i].as_f64() + (1.0 - beta2) * g * g;
        m[i] = S::from_f64(mi);
        v[i] = S::from_f64(vi);
        let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        theta[i] = S::from_f64(theta[i].as_f64() - step);
    }
}
