//! Independent numerical oracles for test suites.
//!
//! Everything here is implemented from first principles (series expansions,
//! quadrature, finite differences) so tests never check an implementation
//! against itself.

/// Error function via the Abramowitz & Stegun 7.1.26 rational approximation.
///
/// Absolute error below 1.5e-7 over the real line.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal PDF.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson quadrature of `f` over `[a, b]` with `n` subintervals
/// (`n` is rounded up to the next even number).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n % 2 == 0 { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Kolmogorov-Smirnov statistic of `samples` against the CDF `cdf`.
///
/// `samples` need not be sorted; a sorted copy is made internally.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let fx = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((fx - lo).abs()).max((hi - fx).abs());
    }
    d
}

/// Central finite-difference gradient of a scalar function at `x`.
pub fn central_diff_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Maximum guarded relative error between two gradient vectors.
///
/// The denominator is floored at 1e-6 so that near-zero entries compare by
/// absolute error instead of blowing up.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &g)| (a - g).abs() / a.abs().max(g.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_known_values() {
        assert!((erf(0.0)).abs() < 2e-7);
        assert!((erf(1.0) - 0.8427007929497149).abs() < 2e-7);
        assert!((erf(-1.0) + 0.8427007929497149).abs() < 2e-7);
    }

    #[test]
    fn simpson_integrates_polynomial_exactly() {
        // Simpson is exact for cubics.
        let got = simpson(|x| x * x * x + 2.0 * x, 0.0, 2.0, 10);
        assert!((got - (4.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn simpson_normal_density_integrates_to_one() {
        let got = simpson(normal_pdf, -10.0, 10.0, 20_000);
        assert!((got - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        // Samples placed at uniform quantiles of the uniform CDF on [0,1].
        let n = 1000;
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&samples, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5 / n as f64 + 1e-12);
    }

    #[test]
    fn central_diff_matches_analytic_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = central_diff_gradient(f, &[2.0, -1.0], 1e-5);
        assert!(max_rel_err(&[4.0, 3.0], &g) < 1e-8);
    }
}
