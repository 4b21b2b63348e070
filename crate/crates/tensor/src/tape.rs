//! Reverse-mode differentiation over a per-forward-pass recording.
//!
//! A [`Tape`] owns every intermediate value produced during one forward
//! pass. Operations append nodes; [`Tape::backward`] walks them in reverse
//! and pushes vector-Jacobian products to the parents. Nodes are appended
//! in topological order, so a single reverse sweep suffices.

use std::collections::HashMap;

use crate::error::{usage_err, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees: the upstream gradient, the forward output,
/// the forward inputs and which of those inputs need a gradient.
pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a Tensor,
    pub out: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub needs: Vec<bool>,
}

impl BackwardCtx<'_> {
    pub fn input(&self, i: usize) -> &Tensor {
        self.inputs[i]
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    leaf_grads: HashMap<Var, Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false, None)
    }

    /// Records a leaf whose gradient is kept and readable via [`Tape::grad`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true, None)
    }

    /// Binds a store entry to this tape. Each entry is bound at most once per
    /// tape, so repeated use of one parameter accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.trainable, Some(id));
        self.bound.insert(id, v);
        v
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            parents: Vec::new(),
            backward: None,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            parents: parents.to_vec(),
            backward: requires_grad.then_some(backward),
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of an [`Tape::input`] leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v)
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Gradients of bound trainable parameters are *added* to
    /// `Parameter::grad` in `store`; calling `backward` twice without
    /// [`ParamStore::zero_grad`] accumulates. Input-leaf gradients likewise
    /// accumulate across calls.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return usage_err(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    self.nodes[loss.0].value.shape()
                ),
            );
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.nodes[loss.0].value.shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(pid) = node.param {
                store.get_mut(pid).grad.add_assign(&g);
                continue;
            }
            let Some(bw) = &node.backward else {
                match self.leaf_grads.get_mut(&Var(i)) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        self.leaf_grads.insert(Var(i), g);
                    }
                }
                continue;
            };
            let ctx = BackwardCtx {
                grad: &g,
                out: &node.value,
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                needs: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let parent_grads = bw(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.input(Tensor::ones(&[2]));
        let err = tape.backward(x, &mut store).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn params_bind_once() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::ones(&[3])).unwrap();
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        assert_eq!(tape.len(), 1);
    }
}
