//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Nodes are
//! appended after their parents, so the node index order is already a
//! topological order and [`Tape::backward`] simply walks it in reverse,
//! visiting each node once and summing gradient contributions over fan-out.

mod gradcheck;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub use gradcheck::{grad_check, GradCheckOptions, GradReport};
pub(crate) use ops::{kron_sum_forward, Op};

pub(crate) struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    param_leaves: RefCell<HashMap<ParamId, usize>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
    params_require_grad: bool,
}

/// Handle to a value recorded on a tape.
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            param_leaves: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
            params_require_grad: true,
        }
    }

    /// A tape on which parameter leaves do not require gradients. Inputs
    /// created with [`Tape::input`] still do, which is what saliency needs.
    pub fn frozen() -> Self {
        Tape {
            params_require_grad: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a stored parameter. Repeated calls with the same id return
    /// the same node, so shared weights are one node with summed gradient.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.param_leaves.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let value = store.get(id).clone();
        let requires_grad = self.params_require_grad && store.is_trainable(id);
        let var = self.push(value, Op::Leaf, requires_grad);
        self.param_leaves.borrow_mut().insert(id, var.id);
        var
    }

    /// Makes `param(_, id)` resolve to `var` from now on.
    pub fn bind_param(&self, id: ParamId, var: Var<'_, T>) {
        self.param_leaves.borrow_mut().insert(id, var.id);
    }

    pub(crate) fn record_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Latest pending value of a buffer, falling back to the store.
    pub(crate) fn buffer_value(&self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        self.buffer_updates
            .borrow()
            .iter()
            .rev()
            .find(|(bid, _)| *bid == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| store.get(id).clone())
    }

    /// Drains running-statistic updates recorded by train-mode forwards.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse pass from a rank-0 `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.rank() != 0 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::scalar(T::one()));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            for (parent, contrib) in node.op.backward(&nodes, &node.value, &g)? {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            // leaves keep their gradient; interior gradients are dropped
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        let params = self
            .param_leaves
            .borrow()
            .iter()
            .map(|(&pid, &node)| (pid, node))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Gradients of every requires-grad leaf reachable from a loss.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .get(&id)
            .and_then(|&node| self.grads.get(node))
            .and_then(Option::as_ref)
    }

    /// Parameter ids that received a gradient.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .params
            .iter()
            .filter(|(_, &node)| self.grads.get(node).is_some_and(Option::is_some))
            .map(|(&id, _)| id)
            .collect();
        ids.sort();
        ids
    }

    /// Node of the leaf bound to parameter `id` on the tape, if any.
    pub fn param_node(&self, id: ParamId) -> Option<usize> {
        self.params.get(&id).copied()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_ref(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.value_ref(self.id))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a rank-0 var.
    pub fn item(&self) -> Result<T> {
        self.with_value(|v| v.item())
    }
}
