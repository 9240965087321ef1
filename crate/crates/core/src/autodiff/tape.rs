//! Computation record and the reverse sweep.
//!
//! Every differentiable op appends a node holding its output value, operand
//! ids and whatever intermediates its gradient rule needs. `backward` replays
//! the rules in reverse execution order and then consumes the record.

use std::cell::{Ref, RefCell};
use std::fmt;

use super::conv::ConvGeom;
use super::param::ParamRef;
use super::rules;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// A differentiable operation defined outside the core op set.
///
/// `backward` returns one gradient buffer per input (or `None` when the
/// input does not need one, as flagged in `needs`).
pub trait CustomOp<T: Element> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Result<Vec<Option<Vec<T>>>>;
}

pub(crate) enum Op<T: Element> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    ScaleShift {
        x: usize,
        scale: T,
    },
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    MatMul(usize, usize),
    Transpose(usize),
    AddRowBias {
        x: usize,
        bias: usize,
    },
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: usize,
        layout: ChannelLayout,
        xhat: Vec<T>,
        invstd: Vec<T>,
        train: bool,
    },
    ChannelAffine {
        x: usize,
        scale: usize,
        shift: usize,
        layout: ChannelLayout,
    },
    Film {
        x: usize,
        gamma: usize,
        beta: usize,
        batch: usize,
        channels: usize,
        inner: usize,
    },
    GlobalAvgPool {
        x: usize,
        inner: usize,
    },
    Sum(usize),
    Mean(usize),
    Embedding {
        table: usize,
        ids: Vec<usize>,
        dim: usize,
    },
    Concat {
        inputs: Vec<usize>,
        sizes: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Narrow {
        x: usize,
        outer: usize,
        axis_len: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    Reshape(usize),
    SoftmaxCrossEntropy {
        logits: usize,
        probs: Vec<T>,
        targets: Vec<usize>,
        classes: usize,
    },
    L2NormalizeRows {
        x: usize,
        norms: Vec<T>,
        dim: usize,
    },
    Custom {
        inputs: Vec<usize>,
        op: Box<dyn CustomOp<T>>,
    },
}

/// `[outer, channels, inner]` view of a tensor around its channel axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelLayout {
    pub outer: usize,
    pub channels: usize,
    pub inner: usize,
}

impl ChannelLayout {
    pub fn of(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::Argument(format!(
                "channel axis {axis} out of range for shape {shape:?}"
            )));
        }
        Ok(ChannelLayout {
            outer: shape[..axis].iter().product(),
            channels: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        })
    }

    #[inline]
    pub fn channel_of(&self, flat: usize) -> usize {
        (flat / self.inner) % self.channels
    }
}

pub(crate) struct Node<T: Element> {
    pub op: Op<T>,
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub param: Option<ParamRef<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum State {
    Recording,
    Consumed,
}

pub(crate) struct Inner<T: Element> {
    pub nodes: Vec<Node<T>>,
    state: State,
}

/// Records one forward pass. Confined to a single thread.
pub struct Tape<T: Element> {
    pub(crate) inner: RefCell<Inner<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("state", &inner.state)
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                state: State::Recording,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check_recording(&self) -> Result<()> {
        if self.inner.borrow().state == State::Consumed {
            return Err(Error::State(
                "computation record already consumed by backward".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn push(
        &self,
        op: Op<T>,
        value: Tensor<T>,
        requires_grad: bool,
        param: Option<ParamRef<T>>,
    ) -> Result<Var<'_, T>> {
        let mut inner = self.inner.borrow_mut();
        if inner.state == State::Consumed {
            return Err(Error::State(
                "computation record already consumed by backward".into(),
            ));
        }
        inner.nodes.push(Node {
            op,
            value,
            requires_grad,
            param,
        });
        Ok(Var {
            tape: self,
            id: inner.nodes.len() - 1,
        })
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    pub(crate) fn any_requires_grad(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.nodes[i].requires_grad)
    }

    pub(crate) fn value_ref(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.inner.borrow(), |i| &i.nodes[id].value)
    }

    /// Records a constant input (never differentiated).
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push(Op::Leaf, value, false, None)
    }

    /// Records a parameter leaf. Its gradient lands in `param.grad()` after
    /// `backward` when the parameter requires grad.
    pub fn param(&self, param: &ParamRef<T>) -> Result<Var<'_, T>> {
        let value = param.value().clone();
        let rg = param.requires_grad();
        self.push(Op::Leaf, value, rg, Some(param.clone()))
    }

    /// Records an op implemented outside the core op set.
    pub fn custom(
        &self,
        inputs: &[Var<'_, T>],
        output: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Var<'_, T>> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = self.any_requires_grad(&ids);
        self.push(Op::Custom { inputs: ids, op }, output, rg, None)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients are added into existing parameter gradient buffers. The
    /// record is consumed; a second call fails with a state error.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = {
            let mut inner = self.inner.borrow_mut();
            if inner.state == State::Consumed {
                return Err(Error::State(
                    "backward called twice on the same computation record".into(),
                ));
            }
            let numel = inner.nodes[loss.id].value.numel();
            if numel != 1 {
                return Err(Error::Argument(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    inner.nodes[loss.id].value.shape()
                )));
            }
            inner.state = State::Consumed;
            std::mem::take(&mut inner.nodes)
        };
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if let Some(p) = &node.param {
                p.accumulate_grad(&g);
                continue;
            }
            rules::apply(&nodes, i, &g, &mut grads)?;
        }
        Ok(())
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor<T> {
        self.tape.value_ref(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.value_ref(self.id))
    }

    pub fn item(&self) -> Result<T> {
        self.tape.value_ref(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}
