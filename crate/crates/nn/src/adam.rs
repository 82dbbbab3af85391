//! Adam optimizer over flat parameter slices.
//!
//! Moment buffers are keyed by visitation order inside one step, so a model
//! must feed its parameters to [`Adam::update`] in the same order every step.

use crate::error::NnError;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    slots: Vec<Moments>,
    cursor: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            slots: Vec::new(),
            cursor: 0,
        }
    }

    /// Advances the global step counter and rewinds the slot cursor.
    pub fn begin_step(&mut self) {
        self.t += 1;
        self.cursor = 0;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one Adam update to `param` in place.
    pub fn update(&mut self, param: &mut [f64], grad: &[f64]) -> Result<(), NnError> {
        if param.len() != grad.len() {
            return Err(NnError::shape(
                format!("{} gradient values", param.len()),
                format!("{}", grad.len()),
            ));
        }
        if self.cursor == self.slots.len() {
            self.slots.push(Moments {
                m: vec![0.0; param.len()],
                v: vec![0.0; param.len()],
            });
        }
        let slot = &mut self.slots[self.cursor];
        if slot.m.len() != param.len() {
            return Err(NnError::shape(
                format!("slot of {} values", slot.m.len()),
                format!("{}", param.len()),
            ));
        }
        self.cursor += 1;

        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(self.t as i32);
        let bias2 = 1.0 - b2.powi(self.t as i32);
        for ((p, &g), (m, v)) in param
            .iter_mut()
            .zip(grad.iter())
            .zip(slot.m.iter_mut().zip(slot.v.iter_mut()))
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut opt = Adam::new(AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.5];
        let g = vec![0.0; 3];
        for _ in 0..10 {
            opt.begin_step();
            opt.update(&mut p, &g).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2, gradient 2w, lr 0.1, starting at w = 1. Momentum makes
        // |w| oscillate across zero, so monotonicity is asserted on the
        // 50-step envelope rather than per step.
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        let mut w: Vec<f64> = vec![1.0];
        let mut window_max: Vec<f64> = Vec::new();
        let mut cur: f64 = 0.0;
        for step in 1..=500 {
            let g = vec![2.0 * w[0]];
            opt.begin_step();
            opt.update(&mut w, &g).unwrap();
            cur = cur.max(w[0].abs());
            if step % 50 == 0 {
                window_max.push(cur);
                cur = 0.0;
            }
        }
        assert!(w[0].abs() < 1e-3, "|w| = {}", w[0].abs());
        for pair in window_max.windows(2) {
            assert!(pair[1] < pair[0], "envelope not decreasing: {window_max:?}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut opt = Adam::new(AdamConfig::default());
        opt.begin_step();
        let mut p = vec![0.0; 3];
        assert!(opt.update(&mut p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_runs_take_identical_trajectories() {
        let run = || {
            let mut opt = Adam::new(AdamConfig::with_lr(0.05));
            let mut w: Vec<f64> = vec![0.7, -0.3];
            for _ in 0..100 {
                let g = vec![2.0 * w[0], 4.0 * w[1].powi(3)];
                opt.begin_step();
                opt.update(&mut w, &g).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }
}
