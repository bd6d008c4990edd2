//! Reverse-mode differentiation tape.
//!
//! Every operation on a [`Var`] appends a node holding its output value,
//! its parents and a backward rule. [`Tape::backward`] visits nodes in
//! exact reverse order of creation, which is a valid reverse topological
//! order because a node can only reference nodes created before it.
//! Gradients arriving from several consumers are summed.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::Tensor;
use crate::{Error, Result};

/// Backward rule: given the gradient of the node's output, the parents'
/// values and the output value, return one gradient per parent (or `None`
/// where the parent receives nothing).
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[Rc<Tensor>], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

struct Inner {
    nodes: Vec<Node>,
    recording: bool,
}

/// Shared handle to a recording of operations.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<Inner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records backward rules.
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape for inference: values only, no backward rules are kept.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Tape { inner: Rc::new(RefCell::new(Inner { nodes: Vec::new(), recording })) }
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        let recording = self.is_recording();
        self.push(value, vec![], None, recording)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, vec![], None, false)
    }

    fn push(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value: Rc::new(value), parents, backward, requires_grad });
        Var { tape: self.clone(), id }
    }

    /// Appends the result of an operation on `parents`.
    pub(crate) fn record<F>(&self, value: Tensor, parents: &[&Var], backward: F) -> Var
    where
        F: Fn(&Tensor, &[Rc<Tensor>], &Tensor) -> Vec<Option<Tensor>> + 'static,
    {
        debug_assert!(parents.iter().all(|p| Rc::ptr_eq(&p.tape.inner, &self.inner)));
        let requires_grad = {
            let inner = self.inner.borrow();
            inner.recording && parents.iter().any(|p| inner.nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        if requires_grad {
            self.push(value, ids, Some(Box::new(backward)), true)
        } else {
            self.push(value, ids, None, false)
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.inner.borrow().nodes[id].value.clone()
    }

    /// Propagates `d root / d node` to every node that requires a gradient.
    ///
    /// `root` must hold a single value.
    pub fn backward(&self, root: &Var) -> Result<Gradients> {
        let inner = self.inner.borrow();
        let root_value = &inner.nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..inner.nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));
        for id in (0..=root.id).rev() {
            let node = &inner.nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor>> =
                node.parents.iter().map(|&p| inner.nodes[p].value.clone()).collect();
            let parent_grads = backward(&g, &inputs, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !inner.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), inner.nodes[p].value.shape(), "grad shape");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// A value on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl Var {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Convenience for `self.tape().backward(self)`.
    pub fn backward(&self) -> Result<Gradients> {
        self.tape.backward(self)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Result of [`Tape::backward`]. Gradients of intermediate nodes are
/// released as soon as they have been propagated, so only leaves (and the
/// root of a constant graph) can be queried.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when no path reaches it.
    pub fn get_or_zeros(&self, var: &Var) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn take(&mut self, var: &Var) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}
