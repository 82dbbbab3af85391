//! Elementwise activations with explicit backward passes.

use ndarray::{Array1, Array2};

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// `x` is the forward input.
pub fn relu_backward(x: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut gx = grad_out.clone();
    gx.zip_mut_with(x, |g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub fn sigmoid(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn tanh(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(f64::tanh)
}

pub fn tanh2(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(f64::tanh)
}

/// `x` is the forward input (pre-activation).
pub fn tanh2_backward(x: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut gx = grad_out.clone();
    gx.zip_mut_with(x, |g, &v| {
        let t = v.tanh();
        *g *= 1.0 - t * t;
    });
    gx
}
