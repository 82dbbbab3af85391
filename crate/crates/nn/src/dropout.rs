//! Inverted dropout. Disabled (`p = 0`) it is the identity, which is the
//! default for the transformer classifier.

use ndarray::Array2;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout { p }
    }

    /// Returns the output and, when active, the keep mask (already scaled by
    /// `1/(1-p)`) to reuse in backward.
    pub fn forward<R: Rng>(
        &self,
        x: &Array2<f64>,
        rng: &mut R,
        training: bool,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        if !training || self.p == 0.0 {
            return (x.clone(), None);
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_fn(x.dim(), |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        (x * &mask, Some(mask))
    }

    pub fn backward(mask: Option<&Array2<f64>>, grad_out: &Array2<f64>) -> Array2<f64> {
        match mask {
            Some(m) => grad_out * m,
            None => grad_out.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_dropout_is_identity() {
        let d = Dropout::new(0.0);
        let x = Array2::from_elem((3, 3), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, mask) = d.forward(&x, &mut rng, true);
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn active_dropout_zeroes_and_rescales() {
        let d = Dropout::new(0.5);
        let x = Array2::from_elem((50, 50), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, mask) = d.forward(&x, &mut rng, true);
        let mask = mask.unwrap();
        let kept = y.iter().filter(|&&v| v != 0.0).count();
        assert!(kept > 0 && kept < 2500);
        for (&yv, &mv) in y.iter().zip(mask.iter()) {
            assert!(yv == 0.0 || (yv - 2.0).abs() < 1e-12);
            assert_eq!(yv, mv);
        }
    }
}
