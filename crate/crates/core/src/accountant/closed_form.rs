//! Closed-form noise magnitudes and step counts.

use super::gaussian::theta;
use super::{check, AccountantError, PrivacyBudget, Result};

fn require_small_epsilon(budget: &PrivacyBudget) -> Result<()> {
    if budget.epsilon > 1.0 {
        return Err(AccountantError::HypothesisViolated {
            hypothesis: "ε ∈ (0, 1] for the Gaussian tail bound",
            detail: format!("ε = {}", budget.epsilon),
        });
    }
    Ok(())
}

fn require_gradient_clipping_epsilon(budget: &PrivacyBudget) -> Result<()> {
    let limit = 3.0 * budget.log_inv_delta();
    if budget.epsilon >= limit {
        return Err(AccountantError::HypothesisViolated {
            hypothesis: "0 < ε < 3·ln(1/δ) for the gradient-clipping bound",
            detail: format!("ε = {} but 3·ln(1/δ) = {limit}", budget.epsilon),
        });
    }
    Ok(())
}

/// Noise σ for which the Gaussian tail bound `1.25·exp(−σ²ε²/(2·dist²))`
/// equals δ, i.e. `σ = dist·√(2·ln(1.25/δ))/ε`. Requires `ε ∈ (0, 1]`.
pub fn gaussian_mechanism_sigma(budget: &PrivacyBudget, dist: f64) -> Result<f64> {
    require_small_epsilon(budget)?;
    gaussian_mechanism_sigma_unchecked(budget, dist)
}

/// [`gaussian_mechanism_sigma`] without the `ε ≤ 1` check.
pub fn gaussian_mechanism_sigma_unchecked(budget: &PrivacyBudget, dist: f64) -> Result<f64> {
    check(
        dist > 0.0 && dist.is_finite(),
        "dist",
        dist,
        "must be positive",
    )?;
    Ok(dist * (2.0 * (1.25 / budget.delta).ln()).sqrt() / budget.epsilon)
}

/// Output perturbation: `σ = C₀·√(8·ln(1.25/δ))/ε`.
///
/// Fails with [`AccountantError::HypothesisViolated`] when `ε > 1`; use
/// [`calibrate_output_perturbation_unchecked`] to override.
pub fn calibrate_output_perturbation(budget: &PrivacyBudget, c0: f64) -> Result<f64> {
    require_small_epsilon(budget)?;
    calibrate_output_perturbation_unchecked(budget, c0)
}

pub fn calibrate_output_perturbation_unchecked(budget: &PrivacyBudget, c0: f64) -> Result<f64> {
    check(c0 > 0.0 && c0.is_finite(), "c0", c0, "must be positive")?;
    gaussian_mechanism_sigma_unchecked(budget, 2.0 * c0)
}

/// Gradient clipping without regularization:
/// `σ² = 9·ln(1/δ)·(C₀ + C₁γT)²/(ε²T)`.
pub fn calibrate_gradient_clipping(
    budget: &PrivacyBudget,
    steps: u64,
    c0: f64,
    c1: f64,
    gamma: f64,
) -> Result<f64> {
    require_gradient_clipping_epsilon(budget)?;
    calibrate_gradient_clipping_unchecked(budget, steps, c0, c1, gamma)
}

/// [`calibrate_gradient_clipping`] without the `ε < 3·ln(1/δ)` check.
pub fn calibrate_gradient_clipping_unchecked(
    budget: &PrivacyBudget,
    steps: u64,
    c0: f64,
    c1: f64,
    gamma: f64,
) -> Result<f64> {
    check(steps >= 1, "steps", steps as f64, "must be at least 1")?;
    check(c0 > 0.0, "c0", c0, "must be positive")?;
    check(c1 >= 0.0, "c1", c1, "must be nonnegative")?;
    check(gamma >= 0.0, "gamma", gamma, "must be nonnegative")?;
    let t = steps as f64;
    let eps = budget.epsilon;
    let var = 9.0 * budget.log_inv_delta() / (eps * eps * t) * (c0 + c1 * gamma * t).powi(2);
    Ok(var.sqrt())
}

/// Gradient clipping with ℓ₂ regularization λ:
/// `σ² = 72·γλ·ln(1/δ)·(C₀(1−γλ)^T + C₁/λ)²/ε²`, valid for `γλ ∈ (1/2, 1)`.
///
/// Outside that window the closed form is not proven; the general Rényi
/// calibration ([`super::calibrate_sigma_via_renyi`]) only needs `γλ < 1`.
pub fn calibrate_gradient_clipping_regularized(
    budget: &PrivacyBudget,
    steps: u64,
    c0: f64,
    c1: f64,
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    require_gradient_clipping_epsilon(budget)?;
    let gl = gamma * lambda;
    if !(gl > 0.5 && gl < 1.0) {
        return Err(AccountantError::HypothesisViolated {
            hypothesis: "γλ ∈ (1/2, 1) for the regularized gradient-clipping bound",
            detail: format!("γλ = {gl}; use calibrate_sigma_via_renyi, which only needs γλ < 1"),
        });
    }
    calibrate_gradient_clipping_regularized_unchecked(budget, steps, c0, c1, gamma, lambda)
}

/// [`calibrate_gradient_clipping_regularized`] without the ε and
/// `γλ > 1/2` hypotheses; still requires `γλ ∈ (0, 1)`.
pub fn calibrate_gradient_clipping_regularized_unchecked(
    budget: &PrivacyBudget,
    steps: u64,
    c0: f64,
    c1: f64,
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    check(steps >= 1, "steps", steps as f64, "must be at least 1")?;
    check(c0 > 0.0, "c0", c0, "must be positive")?;
    check(c1 >= 0.0, "c1", c1, "must be nonnegative")?;
    check(lambda > 0.0, "lambda", lambda, "must be positive")?;
    let gl = gamma * lambda;
    check(
        gl > 0.0 && gl < 1.0,
        "gamma*lambda",
        gl,
        "must lie in (0, 1)",
    )?;
    let eps = budget.epsilon;
    let decay = (steps as f64 * (-gl).ln_1p()).exp();
    let var = 72.0 * gl * budget.log_inv_delta() / (eps * eps) * (c0 * decay + c1 / lambda).powi(2);
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalSteps {
    /// `T* = C₀/(γC₁)`.
    pub real: f64,
    /// Integer minimizer of `(C₀ + C₁γT)²/T` over `T ≥ 1`.
    pub integer: u64,
}

/// Step count minimizing the unregularized gradient-clipping noise.
pub fn optimal_steps_gradient_clipping(c0: f64, c1: f64, gamma: f64) -> Result<OptimalSteps> {
    check(c0 > 0.0 && c0.is_finite(), "c0", c0, "must be positive")?;
    check(c1 > 0.0 && c1.is_finite(), "c1", c1, "must be positive")?;
    check(
        gamma > 0.0 && gamma.is_finite(),
        "gamma",
        gamma,
        "must be positive",
    )?;
    let real = c0 / (gamma * c1);
    let objective = |t: u64| {
        let t = t as f64;
        c0 * c0 / t + gamma * gamma * c1 * c1 * t
    };
    let lo = (real.floor() as u64).max(1);
    let hi = (real.ceil() as u64).max(1);
    let integer = if objective(hi) < objective(lo) {
        hi
    } else {
        lo
    };
    Ok(OptimalSteps { real, integer })
}

/// `36·γ·C₁·C₀·ln(1/δ)/ε²`, the unregularized gradient-clipping variance at
/// `T = T*`.
pub fn gradient_clipping_variance_at_optimum(
    budget: &PrivacyBudget,
    c0: f64,
    c1: f64,
    gamma: f64,
) -> f64 {
    36.0 * gamma * c1 * c0 * budget.log_inv_delta() / (budget.epsilon * budget.epsilon)
}

/// Smallest integer `T ≥ 1` with
/// `T ≥ (ln(1/δ) + ln θ_ε(2C₀/σ₀)) / ln(1/θ_ε(2C₂/σ))`.
///
/// A non-positive numerator means the initial noise alone certifies, and
/// `T = 1` is returned. `σ₀ = 0` means no initial noise (`θ = 1`).
pub fn min_steps_model_clipping(
    budget: &PrivacyBudget,
    c0: f64,
    c2: f64,
    sigma0: f64,
    sigma: f64,
) -> Result<u64> {
    check(c0 > 0.0, "c0", c0, "must be positive")?;
    check(c2 > 0.0, "c2", c2, "must be positive")?;
    check(sigma0 >= 0.0, "sigma0", sigma0, "must be nonnegative")?;
    check(
        sigma > 0.0 && sigma.is_finite(),
        "sigma",
        sigma,
        "must be positive",
    )?;
    let eps = budget.epsilon;
    let initial = if sigma0 == 0.0 {
        1.0
    } else {
        theta(eps, 2.0 * c0 / sigma0)?
    };
    let factor = theta(eps, 2.0 * c2 / sigma)?;
    let numerator = budget.log_inv_delta() + initial.ln();
    if numerator <= 0.0 {
        return Ok(1);
    }
    let denominator = -factor.ln();
    if denominator <= 0.0 {
        return Err(AccountantError::HypothesisViolated {
            hypothesis: "θ_ε(2C₂/σ) < 1",
            detail: format!("θ = {factor}"),
        });
    }
    let ratio = numerator / denominator;
    // An exact integer ratio resolves to itself, not the next integer.
    let nearest = ratio.round();
    let steps = if (ratio - nearest).abs() <= 1e-12 * ratio.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok((steps as u64).max(1))
}

/// δ after each step of model clipping: `δ_{t+1} = θ·δ_t`, starting from
/// `δ₀`. Returns `T + 1` values.
pub fn amplification_trace(delta0: f64, factor: f64, steps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut d = delta0;
    out.push(d);
    for _ in 0..steps {
        d *= factor;
        out.push(d);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelClippingNoise {
    pub sigma: f64,
    /// The bracket was negative and σ was clamped to `√(8·ln 1.25)·C₂/ε`.
    pub clamped: bool,
}

/// Model clipping noise for `T` steps:
/// `σ² = 8C₂²·ln(1.25)/ε²·[1 + (ln(1.25/δ) − σ₀²ε²/(8C₀²))/T]`.
///
/// Requires `ε ∈ (0, 1]`. When σ₀ alone already exceeds the output
/// perturbation level the bracket would drop below 1; σ is then clamped to
/// the asymptote and a warning is logged.
pub fn calibrate_model_clipping(
    budget: &PrivacyBudget,
    steps: u64,
    c0: f64,
    c2: f64,
    sigma0: f64,
) -> Result<ModelClippingNoise> {
    require_small_epsilon(budget)?;
    calibrate_model_clipping_unchecked(budget, steps, c0, c2, sigma0)
}

/// [`calibrate_model_clipping`] without the `ε ≤ 1` check.
pub fn calibrate_model_clipping_unchecked(
    budget: &PrivacyBudget,
    steps: u64,
    c0: f64,
    c2: f64,
    sigma0: f64,
) -> Result<ModelClippingNoise> {
    check(steps >= 1, "steps", steps as f64, "must be at least 1")?;
    check(c0 > 0.0, "c0", c0, "must be positive")?;
    check(c2 > 0.0, "c2", c2, "must be positive")?;
    check(sigma0 >= 0.0, "sigma0", sigma0, "must be nonnegative")?;
    let eps = budget.epsilon;
    let asymptote = 8.0 * c2 * c2 * 1.25f64.ln() / (eps * eps);
    let excess = (1.25 / budget.delta).ln() - sigma0 * sigma0 * eps * eps / (8.0 * c0 * c0);
    if excess < 0.0 {
        log::warn!(
            "initial noise σ₀ = {sigma0} already exceeds the output-perturbation level; clamping σ to the asymptote"
        );
        return Ok(ModelClippingNoise {
            sigma: asymptote.sqrt(),
            clamped: true,
        });
    }
    let var = asymptote * (1.0 + excess / steps as f64);
    Ok(ModelClippingNoise {
        sigma: var.sqrt(),
        clamped: false,
    })
}

/// DP-SGD noise giving the same guarantee for a group of `k` records via
/// group privacy: `σ² = 2C²k²(ln(1.25k/δ) + kε)/ε²`.
pub fn group_dp_sigma(budget: &PrivacyBudget, k: u64, c: f64) -> Result<f64> {
    check(k >= 1, "k", k as f64, "must be at least 1")?;
    check(c > 0.0 && c.is_finite(), "c", c, "must be positive")?;
    let (eps, k) = (budget.epsilon, k as f64);
    let var = 2.0 * c * c * k * k / (eps * eps) * ((1.25 * k / budget.delta).ln() + k * eps);
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> PrivacyBudget {
        PrivacyBudget::new(1.0, 1e-5).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn output_perturbation_fixtures() {
        let b = budget();
        let s = calibrate_output_perturbation(&b, 0.01).unwrap();
        assert!((s - 0.096_896).abs() < 1e-5);
        let s = calibrate_output_perturbation(&b, 1.0).unwrap();
        assert!((s - 9.689_610).abs() < 1e-5);
        assert!(rel(s, 9.689_610_525_210_78) < 1e-14);
        let big = PrivacyBudget::new(2.0, 1e-5).unwrap();
        assert!(calibrate_output_perturbation(&big, 1.0).is_err());
        let forced = calibrate_output_perturbation_unchecked(&big, 1.0).unwrap();
        assert!(rel(forced, 9.689_610_525_210_78 / 2.0) < 1e-14);
    }

    #[test]
    fn output_perturbation_scaling() {
        let b1 = PrivacyBudget::new(0.4, 1e-5).unwrap();
        let b2 = PrivacyBudget::new(0.8, 1e-5).unwrap();
        let s1 = calibrate_output_perturbation(&b1, 0.3).unwrap();
        let s2 = calibrate_output_perturbation(&b2, 0.3).unwrap();
        assert!(rel(s1, 2.0 * s2) < 1e-14);
    }

    #[test]
    fn gradient_clipping_examples() {
        let s = calibrate_gradient_clipping(&budget(), 1, 1.0, 1.0, 0.001).unwrap();
        assert!(rel(s, 10.189_389_847_259_29) < 1e-13);
        let s = calibrate_gradient_clipping(&budget(), 100, 1.0, 1.0, 0.01).unwrap();
        assert!(rel(s * s, 4.144_653_167_389_282) < 1e-13);
        assert!(
            rel(
                s * s,
                gradient_clipping_variance_at_optimum(&budget(), 1.0, 1.0, 0.01)
            ) < 1e-13
        );
        let s2 = calibrate_gradient_clipping(&budget(), 100, 2.0, 2.0, 0.01).unwrap();
        assert!(rel(s2, 2.0 * s) < 1e-14);
    }

    #[test]
    fn gradient_clipping_epsilon_window() {
        let b = PrivacyBudget::new(5.0, 0.5).unwrap();
        let err = calibrate_gradient_clipping(&b, 1, 1.0, 1.0, 0.1).unwrap_err();
        assert!(matches!(err, AccountantError::HypothesisViolated { .. }));
    }

    #[test]
    fn regularized_examples() {
        let s = calibrate_gradient_clipping_regularized(&budget(), 2, 1.0, 1.0, 0.75, 1.0).unwrap();
        assert!(rel(s * s, 701.838_729_712_208_5) < 1e-13);
        let mut prev = f64::INFINITY;
        for t in 1..30 {
            let s =
                calibrate_gradient_clipping_regularized(&budget(), t, 1.0, 1.0, 0.6, 1.0).unwrap();
            assert!(s < prev);
            prev = s;
        }
        let limit = 72.0 * 0.6 * (1e5f64).ln() / 1.0;
        let far =
            calibrate_gradient_clipping_regularized(&budget(), 10_000, 1.0, 1.0, 0.6, 1.0).unwrap();
        assert!(rel(far * far, limit) < 1e-12);
    }

    #[test]
    fn regularized_window_rejected_with_pointer() {
        let err =
            calibrate_gradient_clipping_regularized(&budget(), 2, 1.0, 1.0, 0.1, 1.0).unwrap_err();
        match err {
            AccountantError::HypothesisViolated { detail, .. } => {
                assert!(detail.contains("calibrate_sigma_via_renyi"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn optimal_steps_examples() {
        let o = optimal_steps_gradient_clipping(20.0, 10.0, 0.01).unwrap();
        assert!((o.real - 200.0).abs() < 1e-9);
        assert_eq!(o.integer, 200);
        let o = optimal_steps_gradient_clipping(3.0, 3.0, 1.0).unwrap();
        assert_eq!(o.integer, 1);
        let var = |t| calibrate_gradient_clipping(&budget(), t, 20.0, 10.0, 0.01).unwrap();
        assert!(var(199) >= var(200) && var(201) >= var(200));
        assert!(optimal_steps_gradient_clipping(1.0, 0.0, 0.1).is_err());
        assert!(optimal_steps_gradient_clipping(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn min_steps_examples() {
        // 2C₂/σ = 2 with C₀ = C₂, σ₀ = σ: ceil(16.09) = 17.
        assert_eq!(
            min_steps_model_clipping(&budget(), 1.0, 1.0, 1.0, 1.0).unwrap(),
            17
        );
        assert_eq!(
            min_steps_model_clipping(&budget(), 1.0, 1.0, 100.0, 1.0).unwrap(),
            1
        );
        let a = min_steps_model_clipping(&budget(), 1.0, 1.0, 1.0, 1.0).unwrap();
        let b = min_steps_model_clipping(&budget(), 1.0, 1.0, 1.0, 0.8).unwrap();
        assert!(b > a);
    }

    #[test]
    fn min_steps_certifies_through_recursion() {
        let (c0, c2, s0, s) = (1.0, 0.5, 0.7, 0.6);
        let t = min_steps_model_clipping(&budget(), c0, c2, s0, s).unwrap() as usize;
        let d0 = theta(1.0, 2.0 * c0 / s0).unwrap();
        let f = theta(1.0, 2.0 * c2 / s).unwrap();
        let trace = amplification_trace(d0, f, t);
        assert!(trace[t] <= 1e-5);
        assert!(trace[t - 1] > 1e-5);
    }

    #[test]
    fn amplification_trace_is_geometric() {
        let trace = amplification_trace(0.3, 0.509_861_660_054_670_2, 40);
        for (t, d) in trace.iter().enumerate() {
            let closed = 0.3 * 0.509_861_660_054_670_2f64.powi(t as i32);
            assert!(rel(*d, closed) < 1e-12);
        }
    }

    #[test]
    fn model_clipping_examples() {
        let n = calibrate_model_clipping(&budget(), 10, 1.0, 0.5, 1.0).unwrap();
        assert!(!n.clamped);
        assert!(rel(n.sigma * n.sigma, 0.964_474_137_598_039) < 1e-13);
        assert!(rel(n.sigma, 0.982_076_441_830_288) < 1e-13);
        let big = PrivacyBudget::new(1.5, 1e-5).unwrap();
        assert!(calibrate_model_clipping(&big, 10, 1.0, 0.5, 1.0).is_err());
        let forced = calibrate_model_clipping_unchecked(&big, 10, 1.0, 0.5, 1.0).unwrap();
        assert!(forced.sigma < n.sigma);
    }

    #[test]
    fn unchecked_gradient_clipping_skips_only_hypotheses() {
        let loose = PrivacyBudget::new(5.0, 0.5).unwrap();
        assert!(matches!(
            calibrate_gradient_clipping(&loose, 4, 1.0, 1.0, 0.1),
            Err(AccountantError::HypothesisViolated { .. })
        ));
        let forced = calibrate_gradient_clipping_unchecked(&loose, 4, 1.0, 1.0, 0.1).unwrap();
        let expect = (9.0 * 2f64.ln() * 1.4f64.powi(2) / (25.0 * 4.0)).sqrt();
        assert!(rel(forced, expect) < 1e-14);
        assert!(calibrate_gradient_clipping_unchecked(&loose, 0, 1.0, 1.0, 0.1).is_err());

        let b = budget();
        assert!(calibrate_gradient_clipping_regularized(&b, 3, 1.0, 1.0, 0.01, 10.0).is_err());
        let outside =
            calibrate_gradient_clipping_regularized_unchecked(&b, 3, 1.0, 1.0, 0.01, 10.0).unwrap();
        assert!(outside.is_finite() && outside > 0.0);
        assert!(
            calibrate_gradient_clipping_regularized_unchecked(&b, 3, 1.0, 1.0, 0.2, 10.0).is_err()
        );
        let inside = calibrate_gradient_clipping_regularized(&b, 3, 1.0, 1.0, 0.06, 10.0).unwrap();
        let same =
            calibrate_gradient_clipping_regularized_unchecked(&b, 3, 1.0, 1.0, 0.06, 10.0).unwrap();
        assert_eq!(inside, same);
    }

    #[test]
    fn model_clipping_asymptote_and_cancellation() {
        let b = PrivacyBudget::new(0.5, 1e-5).unwrap();
        let asym = (8.0 * 0.25 * 1.25f64.ln() / 0.25).sqrt();
        let far = calibrate_model_clipping(&b, 1_000_000_000, 1.0, 0.5, 0.0).unwrap();
        assert!(rel(far.sigma, asym) < 1e-8);
        let s0 = calibrate_output_perturbation(&b, 1.0).unwrap();
        for t in [1, 5, 50] {
            let n = calibrate_model_clipping(&b, t, 1.0, 0.5, s0).unwrap();
            assert!(rel(n.sigma, asym) < 1e-12);
        }
        let n = calibrate_model_clipping(&b, 5, 1.0, 0.5, 2.0 * s0).unwrap();
        assert!(n.clamped);
        assert_eq!(n.sigma, asym);
    }

    #[test]
    fn group_dp_examples() {
        let s = group_dp_sigma(&budget(), 1, 1.0).unwrap();
        assert!(rel(s * s, 25.472_138_032_568_876) < 1e-13);
        assert!(rel(s, 5.046_992_969_340_147) < 1e-13);
        let s2 = group_dp_sigma(&budget(), 2, 1.0).unwrap();
        assert!(rel(s2 * s2, 115.433_729_574_755_07) < 1e-13);
        for k in [2, 4, 8] {
            assert!(group_dp_sigma(&budget(), k, 1.0).unwrap() >= k as f64 * s);
        }
        assert!(group_dp_sigma(&budget(), 0, 1.0).is_err());
    }
}
