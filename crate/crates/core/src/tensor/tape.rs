use std::cell::{Ref, RefCell};
use std::fmt;

use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

/// Backward rule: receives every node (for parent values), this node's own
/// output value, the gradient of that output, and a sink into which parent
/// gradients accumulate.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[Node<T>], &[T], &[T], &mut GradSink<'_, T>)>;

pub(crate) struct Node<T> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<T>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Recording of one forward computation.
pub struct Tape<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf holding a copy of `tensor`'s values.
    pub fn leaf(&self, tensor: &Tensor<T>) -> Var<'_, T> {
        self.push_leaf(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad(),
        )
    }

    /// Records a leaf that takes ownership of `tensor`'s storage.
    pub fn leaf_owned(&self, tensor: Tensor<T>) -> Var<'_, T> {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push_leaf(shape, tensor.into_data(), requires_grad)
    }

    pub fn constant(&self, tensor: &Tensor<T>) -> Var<'_, T> {
        self.push_leaf(tensor.shape().to_vec(), tensor.data().to_vec(), false)
    }

    fn push_leaf(&self, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            requires_grad,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<T>,
        parents: &[usize],
        backward: impl Fn(&[Node<T>], &[T], &[T], &mut GradSink<'_, T>) + 'static,
    ) -> Var<'_, T> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            shape,
            value,
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn<T>),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    /// Reverse pass from a scalar `output`. Only leaf gradients survive;
    /// intermediate buffers are released as soon as they are consumed.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>> {
        assert!(std::ptr::eq(self, output.tape), "var from another tape");
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(Error::Input(format!(
                "backward requires a scalar output, got shape {:?}",
                out.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if out.requires_grad {
            grads[output.id] = Some(vec![T::one()]);
        }
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let (before, rest) = grads.split_at_mut(id);
            let Some(grad_out) = rest[0].as_deref() else {
                continue;
            };
            let mut sink = GradSink {
                grads: before,
                nodes: &nodes,
            };
            backward(&nodes, &node.value, grad_out, &mut sink);
            grads[id] = None;
        }
        let shapes = nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Accumulates parent gradients during the reverse pass.
pub(crate) struct GradSink<'a, T> {
    grads: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<T: Element> GradSink<'_, T> {
    pub(crate) fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// Mutable access to the (zero-initialized on first touch) gradient
    /// buffer of `id`, or `None` when that node needs no gradient.
    pub(crate) fn buffer(&mut self, id: usize) -> Option<&mut [T]> {
        if !self.nodes[id].requires_grad {
            return None;
        }
        let len = self.nodes[id].value.len();
        Some(self.grads[id].get_or_insert_with(|| vec![T::zero(); len]))
    }

    pub(crate) fn add(&mut self, id: usize, delta: &[T]) {
        if !self.nodes[id].requires_grad {
            return;
        }
        if self.grads[id].is_none() {
            self.grads[id] = Some(delta.to_vec());
            return;
        }
        if let Some(buf) = self.buffer(id) {
            for (g, &d) in buf.iter_mut().zip(delta) {
                *g = *g + d;
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    pub fn slice(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn get(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let data = self.slice(var)?.to_vec();
        Some(Tensor::new(self.shapes[var.id].clone(), data).expect("gradient shape"))
    }

    /// Moves the gradient of `var` into `tensor.grad`; a node that was
    /// unreachable from the output gets an all-zero gradient.
    pub fn write_into(&mut self, var: Var<'_, T>, tensor: &mut Tensor<T>) -> Result<()> {
        if self.shapes[var.id] != tensor.shape() {
            return Err(Error::dim("write_into", &self.shapes[var.id], tensor.shape()));
        }
        let grad = self.grads[var.id]
            .take()
            .unwrap_or_else(|| vec![T::zero(); tensor.numel()]);
        tensor.set_grad(grad)
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn value(&self) -> Tensor<T> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape")
    }

    /// Runs `f` on the stored values without copying them.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }
}
