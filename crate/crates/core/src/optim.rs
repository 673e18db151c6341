//! Learnable parameters and stochastic gradient descent with momentum.

use crate::tensor::{Real, Tensor};

/// A learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Self { value, grad, velocity }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn accumulate(&mut self, g: &Tensor<T>) {
        assert_eq!(g.shape(), self.grad.shape(), "gradient shape mismatch");
        self.grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn scale_grad(&mut self, k: T) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = *g * k);
    }

    pub fn cast<U: Real>(&self) -> Param<U> {
        Param { value: self.value.cast(), grad: self.grad.cast(), velocity: self.velocity.cast() }
    }
}

/// One momentum step: `velocity ← momentum·velocity + grad`,
/// `value ← value − lr·velocity`, then the gradient is cleared.
pub fn sgdm_step<'a, T: Real>(params: impl IntoIterator<Item = &'a mut Param<T>>, lr: T, momentum: T) {
    for p in params {
        let Param { value, grad, velocity } = p;
        for ((v, vel), &g) in value.data_mut().iter_mut().zip(velocity.data_mut()).zip(grad.data()) {
            *vel = momentum * *vel + g;
            *v = *v - lr * *vel;
        }
        p.zero_grad();
    }
}
