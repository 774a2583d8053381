//! Reverse-mode automatic differentiation.
//!
//! A [`Var`] is a node of a dynamically built expression graph. Each
//! operation records its parents and a closure mapping the output
//! gradient to parent gradients. Nodes that do not depend on any
//! gradient-requiring leaf keep neither parents nor closure, so inference
//! releases intermediates as soon as they go out of scope.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::array::Array;
use crate::scalar::Scalar;

static NEXT_NODE_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_NODE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Maps the gradient of an op's output to gradients of its parents, in
/// parent order. `None` means "no contribution".
pub type BackwardFn<T> = Box<dyn Fn(&Array<T>) -> Vec<Option<Array<T>>>>;

struct Node<T: Scalar> {
    id: u64,
    value: Array<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Differentiable tensor handle. Cloning shares the node.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("requires_grad", &self.0.requires_grad)
            .field("value", &self.0.value)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// A value that never receives gradients.
    pub fn constant(value: Array<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// A leaf whose gradient is reported by [`Var::backward`].
    pub fn leaf(value: Array<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            parents: Vec::new(),
            backward: None,
        }))
    }

    /// Records an operation. The closure is dropped without being stored
    /// when no parent requires gradients.
    pub fn from_op(
        value: Array<T>,
        parents: Vec<Var<T>>,
        backward: impl Fn(&Array<T>) -> Vec<Option<Array<T>>> + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(Var::requires_grad);
        let (parents, backward): (Vec<Var<T>>, Option<BackwardFn<T>>) = if requires_grad {
            (parents, Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            parents,
            backward,
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Array<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    /// Back-propagates from this node seeded with ones.
    pub fn backward(&self) -> Gradients<T> {
        self.backward_with(Array::ones(self.shape()))
    }

    pub fn backward_with(&self, seed: Array<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "seed shape mismatch");
        let mut grads = Gradients {
            leaves: HashMap::new(),
        };
        if !self.requires_grad() {
            return grads;
        }

        // Ids are allocated monotonically and every node is created after
        // its parents, so descending id order is a topological order.
        let mut nodes: HashMap<u64, Var<T>> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || nodes.contains_key(&v.id()) {
                continue;
            }
            for p in &v.0.parents {
                stack.push(p.clone());
            }
            nodes.insert(v.id(), v);
        }
        let mut order: Vec<u64> = nodes.keys().copied().collect();
        order.sort_unstable_by(|a, b| b.cmp(a));

        let mut pending: HashMap<u64, Array<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for id in order {
            let Some(g) = pending.remove(&id) else {
                continue;
            };
            let node = &nodes[&id].0;
            match &node.backward {
                None => {
                    grads.leaves.insert(id, g);
                }
                Some(backward) => {
                    let parent_grads = backward(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        assert_eq!(
                            pg.shape(),
                            p.shape(),
                            "backward produced wrong gradient shape"
                        );
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.add_assign(&pg),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        grads
    }
}

/// Gradients of leaf nodes produced by one backward pass.
pub struct Gradients<T: Scalar> {
    leaves: HashMap<u64, Array<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `leaf`, or `None` when the output does not depend on it.
    pub fn get(&self, leaf: &Var<T>) -> Option<&Array<T>> {
        self.leaves.get(&leaf.id())
    }

    /// Gradient of `leaf`, zero-filled when the output does not depend on it.
    pub fn get_or_zeros(&self, leaf: &Var<T>) -> Array<T> {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Array::zeros(leaf.shape()))
    }
}
