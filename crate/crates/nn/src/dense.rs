//! Fully-connected layer operating row-wise on 2-D inputs.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::init;

/// Linear layer `y = x W + b` with `W` of shape `(in_dim, out_dim)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Parameter gradients for a [`Dense`] layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Dense {
            w: init::xavier_uniform(rng, in_dim, out_dim, in_dim, out_dim),
            b: init::zeros(out_dim),
        }
    }

    /// Xavier init with a multiplicative gain on the weight range.
    pub fn with_gain<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize, gain: f64) -> Self {
        Dense {
            w: init::xavier_uniform_gain(rng, in_dim, out_dim, in_dim, out_dim, gain),
            b: init::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `x` is `(n, in_dim)`; returns `(n, out_dim)`.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>) -> (Array2<f64>, DenseGrads) {
        let grad_w = x.t().dot(grad_out);
        let grad_b = grad_out.sum_axis(Axis(0));
        let grad_x = grad_out.dot(&self.w.t());
        (grad_x, DenseGrads { w: grad_w, b: grad_b })
    }
}

impl DenseGrads {
    pub fn zeros_like(layer: &Dense) -> Self {
        DenseGrads {
            w: Array2::zeros(layer.w.dim()),
            b: Array1::zeros(layer.b.len()),
        }
    }

    pub fn accumulate(&mut self, other: &DenseGrads) {
        self.w += &other.w;
        self.b += &other.b;
    }
}
