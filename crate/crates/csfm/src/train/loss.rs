//! The training objective: mean absolute error.

use crate::error::{Error, Result};
use crate::tensor::{Backward, GradContrib, NodeId, Scalar, Tape, Tensor};

struct L1Backward<S: Scalar> {
    pred: Option<NodeId>,
    target: Option<NodeId>,
    pred_data: std::sync::Arc<Vec<S>>,
    target_data: std::sync::Arc<Vec<S>>,
}

impl<S: Scalar> Backward<S> for L1Backward<S> {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>> {
        let g = grad_out[0];
        let inv_n = S::one() / S::from_f64(self.pred_data.len() as f64);
        let signs = |flip: bool| -> Vec<S> {
            self.pred_data
                .iter()
                .zip(self.target_data.iter())
                .map(|(p, t)| {
                    let d = *p - *t;
                    let s = if d > S::zero() {
                        S::one()
                    } else if d < S::zero() {
                        -S::one()
                    } else {
                        S::zero() // ties get a zero subgradient
                    };
                    let s = if flip { -s } else { s };
                    g * s * inv_n
                })
                .collect()
        };
        let mut out = Vec::new();
        if let Some(p) = self.pred {
            out.push((p, signs(false)));
        }
        if let Some(t) = self.target {
            out.push((t, signs(true)));
        }
        out
    }
}

/// Mean over every element of `|pred - target|`, as a scalar tensor.
/// The subgradient at ties is zero. Shapes must match exactly.
pub fn l1_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pred: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "l1_loss",
            format!("pred {} vs target {}", pred.shape(), target.shape()),
        ));
    }
    let n = S::from_f64(pred.numel() as f64);
    let total = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(S::zero(), |acc, (p, t)| acc + (*p - *t).abs());
    let out = Tensor::scalar(total / n);
    let (p_node, t_node) = (tape.node_of(pred), tape.node_of(target));
    if p_node.is_some() || t_node.is_some() {
        tape.record(
            &out,
            Box::new(L1Backward {
                pred: p_node,
                target: t_node,
                pred_data: pred.buffer(),
                target_data: target.buffer(),
            }),
        );
    }
    Ok(out)
}
