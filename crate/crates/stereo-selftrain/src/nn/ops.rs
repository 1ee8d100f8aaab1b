//! Elementwise activations with explicit backward passes.

use super::tensor::Tensor;

/// ReLU; returns a new tensor.
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Backward of [`relu`] given its input.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    debug_assert_eq!(x.data.len(), dy.data.len());
    let mut dx = dy.clone();
    for (g, &v) in dx.data.iter_mut().zip(&x.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dx
}

/// Logistic sigmoid applied in place; returns the activated tensor.
/// Derivative is recoverable from the output: `s * (1 - s)`.
pub fn sigmoid_inplace(mut x: Tensor) -> Tensor {
    for v in &mut x.data {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    x
}

/// Hyperbolic tangent applied in place; derivative is `1 - t^2`.
pub fn tanh_inplace(mut x: Tensor) -> Tensor {
    for v in &mut x.data {
        *v = v.tanh();
    }
    x
}
