//! Weight initialization. All randomness is drawn from caller-provided RNGs
//! so that a single run-level seed fixes every parameter.

use ndarray::{Array1, Array2};
use rand::Rng;

/// Uniform Xavier/Glorot initialization for a `(rows, cols)` matrix with the
/// given fan-in and fan-out.
pub fn xavier_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Xavier initialization with an extra multiplicative gain.
pub fn xavier_uniform_gain<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
) -> Array2<f64> {
    let limit = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Zero-filled bias vector.
pub fn zeros(len: usize) -> Array1<f64> {
    Array1::zeros(len)
}
