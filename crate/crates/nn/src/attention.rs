//! Multi-head self-attention over batches of fixed-length sequences with
//! suffix padding. Padded positions are excluded as attention keys and their
//! context rows are left at zero; downstream pooling must skip them too.

use ndarray::{s, Array2};
use rand::Rng;

use crate::dense::{Dense, DenseGrads};
use crate::error::NnError;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Dense,
    pub wk: Dense,
    pub wv: Dense,
    pub wo: Dense,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct MhaGrads {
    pub wq: DenseGrads,
    pub wk: DenseGrads,
    pub wv: DenseGrads,
    pub wo: DenseGrads,
}

/// Forward activations kept for the backward pass.
pub struct MhaCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub ctx: Array2<f64>,
    /// Attention probabilities per `(flow, head)`, each `(valid, valid)`.
    pub attn: Vec<Vec<Array2<f64>>>,
    pub seq: usize,
    pub valid: Vec<usize>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(rng: &mut R, model_dim: usize, heads: usize) -> Result<Self, NnError> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "head count {heads} must divide model dim {model_dim}"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Dense::new(rng, model_dim, model_dim),
            wk: Dense::new(rng, model_dim, model_dim),
            wv: Dense::new(rng, model_dim, model_dim),
            wo: Dense::new(rng, model_dim, model_dim),
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn model_dim(&self) -> usize {
        self.wq.in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.wq.param_count()
            + self.wk.param_count()
            + self.wv.param_count()
            + self.wo.param_count()
    }

    /// `x` is `(batch * seq, dim)` with flow `b` occupying rows
    /// `b*seq .. (b+1)*seq`; `valid[b]` is the number of non-pad positions at
    /// the front of flow `b`.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        seq: usize,
        valid: &[usize],
    ) -> Result<(Array2<f64>, MhaCache), NnError> {
        let dim = self.model_dim();
        let batch = valid.len();
        if x.nrows() != batch * seq || x.ncols() != dim {
            return Err(NnError::shape(
                format!("({} * {seq}, {dim})", batch),
                format!("{:?}", x.dim()),
            ));
        }
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let mut ctx = Array2::zeros((batch * seq, dim));
        let mut attn = Vec::with_capacity(batch);

        for (b, &vl) in valid.iter().enumerate() {
            let base = b * seq;
            let mut per_head = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let cols = h * head_dim..(h + 1) * head_dim;
                let qh = q.slice(s![base..base + vl, cols.clone()]);
                let kh = k.slice(s![base..base + vl, cols.clone()]);
                let vh = v.slice(s![base..base + vl, cols.clone()]);

                let mut scores = qh.dot(&kh.t());
                scores *= scale;
                softmax_rows(&mut scores);
                let ctx_h = scores.dot(&vh);
                ctx.slice_mut(s![base..base + vl, cols]).assign(&ctx_h);
                per_head.push(scores);
            }
            attn.push(per_head);
        }

        let y = self.wo.forward(&ctx);
        Ok((
            y,
            MhaCache {
                q,
                k,
                v,
                ctx,
                attn,
                seq,
                valid: valid.to_vec(),
            },
        ))
    }

    /// `x` must be the same input given to `forward`.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        cache: &MhaCache,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, MhaGrads) {
        let dim = self.model_dim();
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let seq = cache.seq;

        let (gctx, wo_grads) = self.wo.backward(&cache.ctx, grad_out);

        let mut dq = Array2::zeros(cache.q.dim());
        let mut dk = Array2::zeros(cache.k.dim());
        let mut dv = Array2::zeros(cache.v.dim());

        for (b, &vl) in cache.valid.iter().enumerate() {
            let base = b * seq;
            for h in 0..self.heads {
                let cols = h * head_dim..(h + 1) * head_dim;
                let probs = &cache.attn[b][h];
                let kh = cache.k.slice(s![base..base + vl, cols.clone()]);
                let qh = cache.q.slice(s![base..base + vl, cols.clone()]);
                let vh = cache.v.slice(s![base..base + vl, cols.clone()]);
                let gctx_h = gctx.slice(s![base..base + vl, cols.clone()]);

                let dprobs = gctx_h.dot(&vh.t());
                let dvh = probs.t().dot(&gctx_h);

                // Softmax jacobian per row: p ∘ (dp − <dp, p>)
                let mut dscores = dprobs.clone();
                for (mut ds_row, p_row) in
                    dscores.rows_mut().into_iter().zip(probs.rows())
                {
                    let dot: f64 = ds_row.iter().zip(p_row.iter()).map(|(a, b)| a * b).sum();
                    for (d, &p) in ds_row.iter_mut().zip(p_row.iter()) {
                        *d = p * (*d - dot);
                    }
                }
                dscores *= scale;

                let dqh = dscores.dot(&kh);
                let dkh = dscores.t().dot(&qh);
                dq.slice_mut(s![base..base + vl, cols.clone()])
                    .assign(&dqh);
                dk.slice_mut(s![base..base + vl, cols.clone()])
                    .assign(&dkh);
                dv.slice_mut(s![base..base + vl, cols]).assign(&dvh);
            }
        }

        let (gx_q, wq_grads) = self.wq.backward(x, &dq);
        let (gx_k, wk_grads) = self.wk.backward(x, &dk);
        let (gx_v, wv_grads) = self.wv.backward(x, &dv);
        let gx = gx_q + gx_k + gx_v;
        (
            gx,
            MhaGrads {
                wq: wq_grads,
                wk: wk_grads,
                wv: wv_grads,
                wo: wo_grads,
            },
        )
    }
}

impl MhaGrads {
    pub fn zeros_like(layer: &MultiHeadAttention) -> Self {
        MhaGrads {
            wq: DenseGrads::zeros_like(&layer.wq),
            wk: DenseGrads::zeros_like(&layer.wk),
            wv: DenseGrads::zeros_like(&layer.wv),
            wo: DenseGrads::zeros_like(&layer.wo),
        }
    }

    pub fn accumulate(&mut self, other: &MhaGrads) {
        self.wq.accumulate(&other.wq);
        self.wk.accumulate(&other.wk);
        self.wv.accumulate(&other.wv);
        self.wo.accumulate(&other.wo);
    }
}

/// In-place numerically stable row softmax.
pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Sinusoidal positional encoding table of shape `(seq, dim)`.
pub fn positional_encoding(seq: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((seq, dim), |(pos, j)| {
        let exponent = (2 * (j / 2)) as f64 / dim as f64;
        let angle = pos as f64 / 10000f64.powf(exponent);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mha = MultiHeadAttention::new(&mut rng, 8, 2).unwrap();
        let x = Array2::from_shape_fn((6, 8), |(i, j)| ((i * 8 + j) as f64).sin());
        let (_, cache) = mha.forward(&x, 3, &[3, 2]).unwrap();
        for per_head in &cache.attn {
            for probs in per_head {
                for row in probs.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn uniform_attention_with_identity_value_averages_tokens() {
        // Zero query/key weights make every score equal, so attention is
        // uniform; identity value and output projections then yield the mean
        // of the token vectors at every position.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mha = MultiHeadAttention::new(&mut rng, 2, 1).unwrap();
        mha.wq.w.fill(0.0);
        mha.wq.b.fill(0.0);
        mha.wk.w.fill(0.0);
        mha.wk.b.fill(0.0);
        mha.wv.w = Array2::eye(2);
        mha.wv.b.fill(0.0);
        mha.wo.w = Array2::eye(2);
        mha.wo.b.fill(0.0);

        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let (y, _) = mha.forward(&x, 2, &[2]).unwrap();
        for i in 0..2 {
            assert!((y[[i, 0]] - 2.0).abs() < 1e-12);
            assert!((y[[i, 1]] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn head_count_must_divide_model_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MultiHeadAttention::new(&mut rng, 128, 5).is_err());
    }

    #[test]
    fn positional_encoding_is_bounded() {
        let pe = positional_encoding(20, 16);
        assert!(pe.iter().all(|v| v.abs() <= 1.0));
        // pos 0: sin(0)=0 on even, cos(0)=1 on odd columns.
        assert_eq!(pe[[0, 0]], 0.0);
        assert_eq!(pe[[0, 1]], 1.0);
    }
}
