//! The gradient tape: a flat record of differentiable operations.
//!
//! Tensors carry no autodiff state themselves; the tape maps buffer
//! addresses to graph nodes. Every indexed buffer is pinned (an `Arc` clone
//! is held) so an address can never be recycled while the tape is alive,
//! which makes the address a sound identity key.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in the recorded graph.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

/// One gradient contribution flowing to an input node.
pub(crate) type GradContrib<S> = (NodeId, Vec<S>);

/// Backward rule of a recorded operation: maps the gradient at the output
/// to contributions for each tracked input.
pub(crate) trait Backward<S: Scalar>: Send {
    fn backward(&self, grad_out: &[S]) -> Vec<GradContrib<S>>;
}

struct Node<S: Scalar> {
    numel: usize,
    /// `None` for leaves registered via [`Tape::watch`].
    op: Option<Box<dyn Backward<S>>>,
}

/// Records the forward pass and replays it in reverse to compute gradients.
///
/// Lifecycle per training step: create (or [`Tape::clear`]), `watch` the
/// parameters, run the forward functions, call [`Tape::backward`] on the
/// scalar loss, read gradients with [`Tape::grad`].
pub struct Tape<S: Scalar> {
    enabled: bool,
    nodes: Vec<Node<S>>,
    /// Buffer address -> node. Sound because `pins` keeps addresses alive.
    index: HashMap<usize, NodeId>,
    pins: Vec<Arc<Vec<S>>>,
    /// Filled by `backward`; indexed by `NodeId`.
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Tape<S> {
    /// A recording tape.
    pub fn new() -> Self {
        Tape {
            enabled: true,
            nodes: Vec::new(),
            index: HashMap::new(),
            pins: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// A non-recording tape for inference: ops run forward math only and
    /// keep no history, so memory stays flat across arbitrarily deep nets.
    pub fn disabled() -> Self {
        Tape {
            enabled: false,
            ..Tape::new()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// Number of recorded nodes (leaves + op outputs).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Registers a leaf whose gradient should be collected. Must be called
    /// before the leaf is consumed by an op. Idempotent; no-op on a
    /// disabled tape.
    pub fn watch(&mut self, t: &Tensor<S>) {
        if !self.enabled {
            return;
        }
        debug_assert!(
            t.requires_grad(),
            "watch() called on a tensor not marked with_grad()"
        );
        let key = t.ptr_key();
        if self.index.contains_key(&key) {
            return;
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            numel: t.numel(),
            op: None,
        });
        self.index.insert(key, id);
        self.pins.push(t.buffer());
    }

    /// Node of a tensor, if it is tracked on this tape.
    pub(crate) fn node_of(&self, t: &Tensor<S>) -> Option<NodeId> {
        if !self.enabled {
            return None;
        }
        self.index.get(&t.ptr_key()).copied()
    }

    /// Registers an op output together with its backward rule.
    pub(crate) fn record(&mut self, out: &Tensor<S>, op: Box<dyn Backward<S>>) -> NodeId {
        debug_assert!(self.enabled, "record() on a disabled tape");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            numel: out.numel(),
            op: Some(op),
        });
        self.index.insert(out.ptr_key(), id);
        self.pins.push(out.buffer());
        id
    }

    /// Runs reverse-mode accumulation from a scalar `loss`.
    ///
    /// Gradients of all tracked tensors reachable from the loss become
    /// available via [`Tape::grad`]. Accumulation visits nodes in strict
    /// reverse creation order and adds contributions in the order each op
    /// emits them, so results are bitwise reproducible.
    pub fn backward(&mut self, loss: &Tensor<S>) -> Result<()> {
        if !self.enabled {
            return Err(Error::Autodiff(
                "backward() called on a disabled tape".into(),
            ));
        }
        if loss.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {}", loss.shape()),
            ));
        }
        // Release builds skip per-op finiteness checks; the loss is the one
        // value that is always verified before gradients propagate.
        if !loss.item().is_finite() {
            return Err(Error::Numeric {
                op: "backward",
                detail: format!("loss is {}", loss.item()),
            });
        }
        let root = self.node_of(loss).ok_or_else(|| {
            Error::Autodiff("loss tensor is not tracked on this tape".into())
        })?;

        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![S::one()]);

        for id in (0..self.nodes.len()).rev() {
            let Some(op) = self.nodes[id].op.as_ref() else {
                continue; // leaf
            };
            let Some(grad_out) = grads[id].take() else {
                continue; // not on any path to the loss
            };
            for (src, contrib) in op.backward(&grad_out) {
                let slot = &mut grads[src.0];
                match slot {
                    Some(acc) => {
                        debug_assert_eq!(acc.len(), contrib.len());
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a = *a + *c;
                        }
                    }
                    None => {
                        debug_assert_eq!(contrib.len(), self.nodes[src.0].numel);
                        *slot = Some(contrib);
                    }
                }
            }
            // The output gradient was taken; interior results are dropped
            // as soon as they are consumed, leaves keep theirs below.
        }

        self.grads = grads;
        Ok(())
    }

    /// Gradient of `t` from the last [`Tape::backward`] run, if any.
    pub fn grad(&self, t: &Tensor<S>) -> Option<&[S]> {
        let id = self.node_of(t)?;
        self.grads.get(id.0)?.as_deref()
    }

    /// Drops all recorded history, releasing pinned buffers, but keeps the
    /// tape usable (and keeps its enabled/disabled mode).
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.index.clear();
        self.pins.clear();
        self.grads.clear();
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}
