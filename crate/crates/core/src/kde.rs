//! Univariate Gaussian kernel density estimation: Silverman bandwidth
//! selection, density evaluation, and exact mixture sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KdeError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("samples are degenerate (zero standard deviation)")]
    DegenerateSamples,
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("sample values must be finite")]
    NonFiniteSample,
    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: i64, hi: i64 },
}

/// Bessel-corrected sample standard deviation.
fn sample_std(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (ss / (n - 1.0)).sqrt()
}

/// Gaussian-optimal bandwidth h* = (4 sigma^5 / (3 n))^(1/5) with sigma the
/// Bessel-corrected sample standard deviation.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, KdeError> {
    if samples.len() < 2 {
        return Err(KdeError::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(KdeError::NonFiniteSample);
    }
    let sigma = sample_std(samples);
    if sigma == 0.0 {
        return Err(KdeError::DegenerateSamples);
    }
    let n = samples.len() as f64;
    Ok((4.0 * sigma.powi(5) / (3.0 * n)).powf(0.2))
}

/// Fitted univariate Gaussian KDE: the retained samples plus a bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    /// Fits a model; with `bandwidth` omitted the Silverman rule applies,
    /// which requires at least two non-identical samples.
    pub fn fit(samples: Vec<f64>, bandwidth: Option<f64>) -> Result<Self, KdeError> {
        match bandwidth {
            Some(h) => Self::with_bandwidth(samples, h),
            None => {
                let h = silverman_bandwidth(&samples)?;
                Self::with_bandwidth(samples, h)
            }
        }
    }

    /// Explicit-bandwidth construction; permits degenerate and single-sample
    /// data since no bandwidth has to be estimated.
    pub fn with_bandwidth(samples: Vec<f64>, bandwidth: f64) -> Result<Self, KdeError> {
        if samples.is_empty() {
            return Err(KdeError::InsufficientSamples { needed: 1, got: 0 });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(KdeError::NonFiniteSample);
        }
        if !bandwidth.is_finite() || bandwidth <= 0.0 {
            return Err(KdeError::InvalidBandwidth(bandwidth));
        }
        Ok(KdeModel { samples, bandwidth })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Density estimate: mean of standard normal kernels centered on the
    /// samples, scaled by the bandwidth.
    pub fn pdf(&self, x: f64) -> f64 {
        let n = self.samples.len() as f64;
        let h = self.bandwidth;
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let sum: f64 = self
            .samples
            .iter()
            .map(|&xi| {
                let u = (x - xi) / h;
                norm * (-0.5 * u * u).exp()
            })
            .sum();
        sum / (n * h)
    }

    /// Exact sampler for the estimated density: pick a sample uniformly, add
    /// bandwidth-scaled Gaussian noise.
    pub fn sample_with<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        (0..count)
            .map(|_| {
                let i = rng.gen_range(0..self.samples.len());
                let z: f64 = rng.sample(StandardNormal);
                self.samples[i] + self.bandwidth * z
            })
            .collect()
    }

    /// Seeded convenience wrapper around [`KdeModel::sample_with`].
    pub fn sample(&self, count: usize, rng_seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample_with(count, &mut rng)
    }

    /// Draws, rounds to the nearest integer, and clamps into `[lo, hi]`.
    pub fn sample_clamped_int_with<R: Rng>(
        &self,
        count: usize,
        lo: i64,
        hi: i64,
        rng: &mut R,
    ) -> Result<Vec<i64>, KdeError> {
        if lo > hi {
            return Err(KdeError::InvalidRange { lo, hi });
        }
        Ok(self
            .sample_with(count, rng)
            .into_iter()
            .map(|v| clamp_round(v, lo, hi))
            .collect())
    }

    pub fn sample_clamped_int(
        &self,
        count: usize,
        lo: i64,
        hi: i64,
        rng_seed: u64,
    ) -> Result<Vec<i64>, KdeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample_clamped_int_with(count, lo, hi, &mut rng)
    }
}

fn clamp_round(v: f64, lo: i64, hi: i64) -> i64 {
    if v <= lo as f64 {
        lo
    } else if v >= hi as f64 {
        hi
    } else {
        v.round() as i64
    }
}
