//! Single LSTM cell with fused gate weights and explicit backward-through-time
//! support. Sequence unrolling lives with the callers.

use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::activation::{sigmoid, tanh};
use crate::init;

/// Gate weights stacked as `[input, forget, cell, output]` blocks of `hidden`
/// rows each, applied to the concatenation `[x, h_prev]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    input_dim: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Hidden and cell state carried between steps.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

/// Per-step activations needed by the backward pass.
pub struct LstmStepCache {
    z: Array1<f64>,
    c_prev: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    tanh_c: Array1<f64>,
}

impl LstmCell {
    /// Xavier-initialized weights; the forget-gate bias starts at 1.
    pub fn new<R: Rng>(rng: &mut R, input_dim: usize, hidden: usize) -> Self {
        let w = init::xavier_uniform(
            rng,
            4 * hidden,
            input_dim + hidden,
            input_dim + hidden,
            hidden,
        );
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmCell {
            w,
            b,
            input_dim,
            hidden,
        }
    }

    /// Rebuilds a cell from explicit weights, e.g. out of a model archive.
    pub fn from_parts(w: Array2<f64>, b: Array1<f64>) -> Self {
        let rows = w.nrows();
        assert!(rows % 4 == 0, "fused gate weights need 4*hidden rows");
        let hidden = rows / 4;
        assert!(w.ncols() > hidden, "weight columns must cover input + hidden");
        assert_eq!(b.len(), rows);
        let input_dim = w.ncols() - hidden;
        LstmCell {
            w,
            b,
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: Array1::zeros(self.hidden),
            c: Array1::zeros(self.hidden),
        }
    }

    pub fn forward_step(&self, x: &Array1<f64>, state: &LstmState) -> (LstmState, LstmStepCache) {
        let h = self.hidden;
        let mut z = Array1::zeros(self.input_dim + h);
        z.slice_mut(s![..self.input_dim]).assign(x);
        z.slice_mut(s![self.input_dim..]).assign(&state.h);

        let pre = self.w.dot(&z) + &self.b;
        let i = sigmoid(&pre.slice(s![..h]).to_owned());
        let f = sigmoid(&pre.slice(s![h..2 * h]).to_owned());
        let g = tanh(&pre.slice(s![2 * h..3 * h]).to_owned());
        let o = sigmoid(&pre.slice(s![3 * h..]).to_owned());

        let c = &f * &state.c + &i * &g;
        let tanh_c = tanh(&c);
        let h_new = &o * &tanh_c;

        let cache = LstmStepCache {
            z,
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        (LstmState { h: h_new, c }, cache)
    }

    /// Backward for one step. `dh`/`dc` are the gradients flowing into this
    /// step's output state; parameter gradients accumulate into `grads`.
    /// Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(
        &self,
        cache: &LstmStepCache,
        dh: &Array1<f64>,
        dc: &Array1<f64>,
        grads: &mut LstmGrads,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let h = self.hidden;
        let d_o = dh * &cache.tanh_c;
        let dc_total = dc + &(dh * &cache.o * &cache.tanh_c.mapv(|t| 1.0 - t * t));

        let di = &dc_total * &cache.g;
        let df = &dc_total * &cache.c_prev;
        let dg = &dc_total * &cache.i;
        let dc_prev = &dc_total * &cache.f;

        let mut dpre = Array1::zeros(4 * h);
        dpre.slice_mut(s![..h])
            .assign(&(&di * &cache.i.mapv(|v| v * (1.0 - v))));
        dpre.slice_mut(s![h..2 * h])
            .assign(&(&df * &cache.f.mapv(|v| v * (1.0 - v))));
        dpre.slice_mut(s![2 * h..3 * h])
            .assign(&(&dg * &cache.g.mapv(|v| 1.0 - v * v)));
        dpre.slice_mut(s![3 * h..])
            .assign(&(&d_o * &cache.o.mapv(|v| v * (1.0 - v))));

        // dW += dpre ⊗ z
        for (row, &dp) in grads.w.rows_mut().into_iter().zip(dpre.iter()) {
            let mut row = row;
            row.scaled_add(dp, &cache.z);
        }
        grads.b += &dpre;

        let dz = self.w.t().dot(&dpre);
        let dx = dz.slice(s![..self.input_dim]).to_owned();
        let dh_prev = dz.slice(s![self.input_dim..]).to_owned();
        (dx, dh_prev, dc_prev)
    }
}

impl LstmGrads {
    pub fn zeros_like(cell: &LstmCell) -> Self {
        LstmGrads {
            w: Array2::zeros(cell.w.dim()),
            b: Array1::zeros(cell.b.len()),
        }
    }

    pub fn accumulate(&mut self, other: &LstmGrads) {
        self.w += &other.w;
        self.b += &other.b;
    }
}
