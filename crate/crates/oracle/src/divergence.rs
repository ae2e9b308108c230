//! Divergences between one-dimensional Gaussians, computed by direct
//! integration of their densities or by the textbook Rényi identity.

use crate::quadrature::integrate;
use crate::{OracleError, Result};

const TAIL_SPAN: f64 = 12.0;

fn log_normal_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard Gaussian upper tail `P(Z > t)` by quadrature of the density.
pub fn gaussian_tail_quadrature(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(OracleError::InvalidArgument(format!("t = {t}")));
    }
    let upper = 40.0;
    if t >= upper {
        return Ok(0.0);
    }
    integrate(
        |u| (log_normal_density(u, 0.0, 1.0)).exp(),
        t,
        upper,
        &[0.0, 1.0, 3.0],
        1e-16,
    )
}

/// Hockey-stick divergence `∫ [μ − e^ε ν]₊` between `N(mu1, σ²)` and
/// `N(mu2, σ²)` by adaptive quadrature.
///
/// The integrand is truncated to `[min(mu) − 12σ, max(mu) + 12σ]` and split
/// at the point where the two scaled densities cross (the only kink).
pub fn hs_quadrature(mu1: f64, mu2: f64, sigma: f64, eps: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(OracleError::InvalidArgument(format!("sigma = {sigma}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) || !mu1.is_finite() || !mu2.is_finite() {
        return Err(OracleError::InvalidArgument(format!(
            "mu1 = {mu1}, mu2 = {mu2}, eps = {eps}"
        )));
    }
    let lo = mu1.min(mu2) - TAIL_SPAN * sigma;
    let hi = mu1.max(mu2) + TAIL_SPAN * sigma;
    let mut breaks = vec![mu1, mu2];
    if mu1 != mu2 {
        // log μ(x) − log ν(x) = ε is linear in x.
        breaks.push(0.5 * (mu1 + mu2) + eps * sigma * sigma / (mu1 - mu2));
    }
    let scale = eps.exp();
    let integrand = |x: f64| {
        let p = log_normal_density(x, mu1, sigma).exp();
        let q = log_normal_density(x, mu2, sigma).exp();
        (p - scale * q).max(0.0)
    };
    integrate(integrand, lo, hi, &breaks, 1e-11)
}

/// Rényi divergence of order `q` between two Gaussians with common variance
/// `σ²` whose means are `dist` apart: `q·dist²/(2σ²)`.
pub fn gaussian_renyi(q: f64, dist: f64, sigma: f64) -> f64 {
    q * dist * dist / (2.0 * sigma * sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_values() {
        assert!((gaussian_tail_quadrature(0.0).unwrap() - 0.5).abs() < 1e-13);
        assert!((gaussian_tail_quadrature(1.5).unwrap() - 0.066_807_201_268_858_07).abs() < 1e-13);
        assert!((gaussian_tail_quadrature(-0.5).unwrap() - 0.691_462_461_274_013_1).abs() < 1e-13);
    }

    #[test]
    fn total_variation_at_distance_two() {
        let v = hs_quadrature(0.0, 2.0, 1.0, 0.0).unwrap();
        assert!((v - 0.682_689_492_137_085_9).abs() < 1e-9);
    }

    #[test]
    fn identical_distributions_have_zero_divergence() {
        for eps in [0.0, 0.5, 3.0] {
            assert!(hs_quadrature(0.0, 0.0, 1.0, eps).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn contraction_value_at_distance_two() {
        let v = hs_quadrature(0.0, 2.0, 1.0, 1.0).unwrap();
        assert!((v - 0.509_861_660_054_670_2).abs() < 1e-9);
    }

    #[test]
    fn renyi_is_linear_in_order() {
        assert_eq!(gaussian_renyi(2.0, 2.0, 1.0), 4.0);
        assert!(
            (gaussian_renyi(6.0, 0.3, 0.7) - 3.0 * gaussian_renyi(2.0, 0.3, 0.7)).abs() < 1e-15
        );
    }

    #[test]
    fn rejects_bad_sigma() {
        assert!(hs_quadrature(0.0, 1.0, 0.0, 1.0).is_err());
    }
}
