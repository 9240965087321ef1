use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;

use super::tensor::{Element, Tensor};

/// A leaf tensor that can accumulate gradients across backward passes.
///
/// Models own their weights as `Rc<Param<T>>`; the optimizer is the only
/// writer of `value` between steps.
#[derive(Debug)]
pub struct Param<T> {
    name: String,
    value: RefCell<Tensor<T>>,
    grad: RefCell<Option<Tensor<T>>>,
    requires_grad: Cell<bool>,
}

pub type ParamRef<T> = Rc<Param<T>>;

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> ParamRef<T> {
        Rc::new(Param {
            name: name.into(),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad: Cell::new(true),
        })
    }

    /// A leaf that never receives gradients.
    pub fn constant(name: impl Into<String>, value: Tensor<T>) -> ParamRef<T> {
        let p = Self::new(name, value);
        p.set_requires_grad(false);
        p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> Ref<'_, Tensor<T>> {
        self.value.borrow()
    }

    pub fn value_mut(&self) -> RefMut<'_, Tensor<T>> {
        self.value.borrow_mut()
    }

    pub fn set_value(&self, v: Tensor<T>) {
        *self.value.borrow_mut() = v;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value.borrow().numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad.get()
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.requires_grad.set(on);
        if !on {
            self.zero_grad();
        }
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Tensor<T>>> {
        self.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (a, &b) in buf.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => {
                let shape = self.value.borrow().shape().to_vec();
                *slot = Some(Tensor::new(shape, g.to_vec()).expect("grad matches value shape"));
            }
        }
    }
}

/// Collects every parameter of a module tree, in a stable order.
pub trait Module<T: Element> {
    fn parameters(&self) -> Vec<ParamRef<T>>;

    /// Non-learnable state saved with checkpoints (batch-norm running stats).
    fn buffers(&self) -> Vec<ParamRef<T>> {
        Vec::new()
    }

    /// Parameters followed by buffers.
    fn state(&self) -> Vec<ParamRef<T>> {
        let mut s = self.parameters();
        s.extend(self.buffers());
        s
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    fn set_trainable(&self, on: bool) {
        for p in self.parameters() {
            p.set_requires_grad(on);
        }
    }
}
