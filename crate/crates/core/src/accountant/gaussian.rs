//! Gaussian tail, contraction coefficient and hockey-stick divergences
//! between isotropic Gaussians with a shared variance.

use super::{check, AccountantError, Result};

/// Standard Gaussian upper tail `Q(t) = P(Z > t)`, via `erfc`.
pub fn q_tail(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(AccountantError::InvalidArgument {
            name: "t",
            value: t,
            reason: "must be finite",
        });
    }
    Ok(0.5 * libm::erfc(t / std::f64::consts::SQRT_2))
}

// Q without the finiteness check; infinite arguments give 0 or 1.
fn q(t: f64) -> f64 {
    0.5 * libm::erfc(t / std::f64::consts::SQRT_2)
}

// Q(ε/r − r/2) − e^ε Q(ε/r + r/2), clamped to [0, 1].
fn contraction(eps: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    if r.is_infinite() {
        return 1.0;
    }
    let a = eps / r;
    let b = 0.5 * r;
    (q(a - b) - eps.exp() * q(a + b)).clamp(0.0, 1.0)
}

/// Contraction coefficient `θ_ε(r) = Q(ε/r − r/2) − e^ε·Q(ε/r + r/2)`.
///
/// This is the exact hockey-stick divergence `E_ε` between two unit-variance
/// Gaussians whose means are `r` apart. It lies in `(0, 1)` and increases
/// with `r`.
pub fn theta(eps: f64, r: f64) -> Result<f64> {
    check(eps > 0.0 && eps.is_finite(), "eps", eps, "must be positive")?;
    check(r > 0.0 && !r.is_nan(), "r", r, "must be positive")?;
    Ok(contraction(eps, r))
}

/// Exact `E_ε(N(μ₁, σ²I) ‖ N(μ₂, σ²I))` with `‖μ₁ − μ₂‖ = dist`.
///
/// `dist = 0` returns 0 (identical distributions).
pub fn hs_gaussians_exact(eps: f64, dist: f64, sigma: f64) -> Result<f64> {
    check(
        eps >= 0.0 && eps.is_finite(),
        "eps",
        eps,
        "must be nonnegative",
    )?;
    check(
        dist >= 0.0 && dist.is_finite(),
        "dist",
        dist,
        "must be nonnegative",
    )?;
    check(
        sigma > 0.0 && sigma.is_finite(),
        "sigma",
        sigma,
        "must be positive",
    )?;
    Ok(contraction(eps, dist / sigma))
}

/// Upper bound `1.25·exp(−σ²ε²/(2·dist²))` on the hockey-stick divergence
/// between Gaussians, for `ε ∈ (0, 1]`.
pub fn hs_gaussians_upper(eps: f64, dist: f64, sigma: f64) -> Result<f64> {
    check(
        eps > 0.0 && eps <= 1.0,
        "eps",
        eps,
        "tail bound requires ε in (0, 1]",
    )?;
    check(
        dist > 0.0 && dist.is_finite(),
        "dist",
        dist,
        "must be positive",
    )?;
    check(sigma > 0.0, "sigma", sigma, "must be positive")?;
    Ok(1.25 * (-(sigma * sigma * eps * eps) / (2.0 * dist * dist)).exp())
}
