//! Token embedding table with scatter-add gradients.

use ndarray::Array2;
use rand::Rng;

use crate::init;

#[derive(Debug, Clone)]
pub struct Embedding {
    /// `(vocab_size, dim)` lookup table.
    pub table: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingGrads {
    pub table: Array2<f64>,
}

impl Embedding {
    pub fn new<R: Rng>(rng: &mut R, vocab_size: usize, dim: usize) -> Self {
        Embedding {
            table: init::xavier_uniform(rng, vocab_size, dim, vocab_size, dim),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.table.len()
    }

    /// Looks up one row per id; returns `(ids.len(), dim)`.
    pub fn forward(&self, ids: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids.iter()) {
            row.assign(&self.table.row(id));
        }
        out
    }

    pub fn backward(&self, ids: &[usize], grad_out: &Array2<f64>) -> EmbeddingGrads {
        let mut table = Array2::zeros(self.table.dim());
        for (g_row, &id) in grad_out.rows().into_iter().zip(ids.iter()) {
            let mut target = table.row_mut(id);
            target += &g_row;
        }
        EmbeddingGrads { table }
    }
}

impl EmbeddingGrads {
    pub fn zeros_like(layer: &Embedding) -> Self {
        EmbeddingGrads {
            table: Array2::zeros(layer.table.dim()),
        }
    }

    pub fn accumulate(&mut self, other: &EmbeddingGrads) {
        self.table += &other.table;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lookup_returns_table_rows() {
        let emb = Embedding::new(&mut ChaCha8Rng::seed_from_u64(3), 5, 4);
        let out = emb.forward(&[2, 2, 0]);
        assert_eq!(out.row(0), emb.table.row(2));
        assert_eq!(out.row(1), emb.table.row(2));
        assert_eq!(out.row(2), emb.table.row(0));
    }

    #[test]
    fn repeated_ids_accumulate_gradient() {
        let emb = Embedding::new(&mut ChaCha8Rng::seed_from_u64(3), 5, 2);
        let gy = Array2::ones((3, 2));
        let grads = emb.backward(&[1, 1, 4], &gy);
        assert_eq!(grads.table[[1, 0]], 2.0);
        assert_eq!(grads.table[[4, 0]], 1.0);
        assert_eq!(grads.table[[0, 0]], 0.0);
    }
}
