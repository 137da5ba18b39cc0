//! Dense `f64` tensors, a small reverse-mode graph over the operators the
//! distillation pipeline needs, and a central-difference gradient oracle.

mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{Graph, Var};
pub use kernels::{lerp_plan, LerpTap};
pub use tensor::Tensor;

/// Central-difference estimate of the gradient of `f` at `x`.
pub fn finite_difference_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "eps must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Relative error `|a - b|_inf / max(|a|_inf, |b|_inf, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    let scale = a.data().iter().chain(b.data()).fold(floor, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

/// Heavy-ball SGD: `v <- momentum * v + g; p <- p - lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Momentum { lr, momentum, velocity: Vec::new() }
    }

    /// Applies one step to `params` in order; the parameter list must keep the
    /// same shapes and order across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        self.step_with_rates(params, grads, &vec![self.lr; grads.len()]);
    }

    /// Like [`Momentum::step`], with parameter `i` moving at `rates[i]`
    /// instead of `lr`.
    pub fn step_with_rates(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], rates: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), rates.len());
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for (((p, g), v), &lr) in params.iter_mut().zip(grads).zip(&mut self.velocity).zip(rates) {
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + gi;
            }
            p.axpy(-lr, v);
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}
