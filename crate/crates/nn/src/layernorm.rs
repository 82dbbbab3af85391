//! Layer normalization over the last axis of a 2-D input.

use ndarray::{Array1, Array2, Axis};

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Values saved by the forward pass for the backward computation.
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            eps: 1e-5,
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    /// Normalizes each row of `x` to zero mean and unit variance, then scales
    /// and shifts by `gamma`/`beta`.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mean = x.sum_axis(Axis(1)) / d;
        let mut xhat = x.clone();
        for (mut row, &m) in xhat.rows_mut().into_iter().zip(mean.iter()) {
            row -= m;
        }
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        for (mut row, &s) in xhat.rows_mut().into_iter().zip(inv_std.iter()) {
            row *= s;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, LayerNormGrads) {
        let d = grad_out.ncols() as f64;
        let grad_gamma = (grad_out * &cache.xhat).sum_axis(Axis(0));
        let grad_beta = grad_out.sum_axis(Axis(0));

        let dxhat = grad_out * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(1));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1));

        let mut gx = dxhat * d;
        for ((mut row, (&s1, &s2)), xhat_row) in gx
            .rows_mut()
            .into_iter()
            .zip(sum_dxhat.iter().zip(sum_dxhat_xhat.iter()))
            .zip(cache.xhat.rows())
        {
            for (g, &xh) in row.iter_mut().zip(xhat_row.iter()) {
                *g -= s1 + xh * s2;
            }
        }
        for (mut row, &s) in gx.rows_mut().into_iter().zip(cache.inv_std.iter()) {
            row *= s / d;
        }
        (
            gx,
            LayerNormGrads {
                gamma: grad_gamma,
                beta: grad_beta,
            },
        )
    }
}

impl LayerNormGrads {
    pub fn zeros_like(layer: &LayerNorm) -> Self {
        LayerNormGrads {
            gamma: Array1::zeros(layer.gamma.len()),
            beta: Array1::zeros(layer.beta.len()),
        }
    }

    pub fn accumulate(&mut self, other: &LayerNormGrads) {
        self.gamma += &other.gamma;
        self.beta += &other.beta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rows_are_normalized() {
        let ln = LayerNorm::new(4);
        let x = array![[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 30.0, 30.0]];
        let (y, _) = ln.forward(&x);
        for row in y.rows() {
            let mean: f64 = row.mean().unwrap();
            let var: f64 = row.mapv(|v| v * v).mean().unwrap();
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
