//! Softmax and fused softmax/cross-entropy with max-subtraction for
//! numerical stability.

use ndarray::Array2;

use crate::attention::softmax_rows;

/// Row-wise softmax of `logits`.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    softmax_rows(&mut out);
    out
}

/// Summed cross-entropy of `logits` rows against integer `targets`.
///
/// Returns the loss sum over rows together with the softmax probabilities
/// needed by [`softmax_cross_entropy_backward`].
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), targets.len());
    let mut loss = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(targets.iter()) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
    }
    (loss, softmax(logits))
}

/// Gradient of the summed cross-entropy wrt logits, scaled by `scale`
/// (use `1/n` to differentiate the mean loss).
pub fn softmax_cross_entropy_backward(
    probs: &Array2<f64>,
    targets: &[usize],
    scale: f64,
) -> Array2<f64> {
    let mut grad = probs.clone();
    for (mut row, &t) in grad.rows_mut().into_iter().zip(targets.iter()) {
        row[t] -= 1.0;
        row *= scale;
    }
    grad
}
