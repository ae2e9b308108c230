//! Noise calibration for certified unlearning.
//!
//! Pure functions computing hockey-stick and Rényi divergence bounds and the
//! per-step noise magnitude σ (or the minimum number of noisy steps) needed
//! for each unlearning procedure to certify a target (ε, δ). All logarithms
//! are natural.
//!
//! The submodules are:
//!
//! - [`gaussian`]: the Gaussian tail `Q`, the contraction coefficient `θ_ε`,
//!   exact and upper-bounded hockey-stick divergences between Gaussians.
//! - [`closed_form`]: closed-form σ for output perturbation, gradient
//!   clipping (with and without ℓ₂ regularization), model clipping and the
//!   group-privacy DP-SGD baseline, plus the optimal step count.
//! - [`renyi`]: the general amplification-by-iteration bound for arbitrary
//!   step-size/noise schedules, Rényi→DP conversion and σ calibration by
//!   bisection.

pub mod closed_form;
pub mod gaussian;
pub mod renyi;

pub use closed_form::{
    amplification_trace, calibrate_gradient_clipping, calibrate_gradient_clipping_regularized,
    calibrate_gradient_clipping_regularized_unchecked, calibrate_gradient_clipping_unchecked,
    calibrate_model_clipping, calibrate_model_clipping_unchecked, calibrate_output_perturbation,
    calibrate_output_perturbation_unchecked, gaussian_mechanism_sigma,
    gaussian_mechanism_sigma_unchecked, gradient_clipping_variance_at_optimum, group_dp_sigma,
    min_steps_model_clipping, optimal_steps_gradient_clipping, ModelClippingNoise, OptimalSteps,
};
pub use gaussian::{hs_gaussians_exact, hs_gaussians_upper, q_tail, theta};
pub use renyi::{
    calibrate_sigma_via_renyi, certify_schedule, renyi_bound, renyi_bound_constant,
    renyi_slope_for_epsilon, renyi_to_dp, DpConversion, RenyiPoint, ShiftSchedule, SigmaShape,
    StepPlan,
};

use std::fmt;

use thiserror::Error;

use crate::method::Method;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountantError {
    #[error("invalid {name} = {value}: {reason}")]
    InvalidArgument {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("hypothesis violated: {hypothesis} ({detail})")]
    HypothesisViolated {
        hypothesis: &'static str,
        detail: String,
    },

    #[error("schedule is inconsistent: {0}")]
    InvalidSchedule(String),

    #[error("search window [{lo:e}, {hi:e}] does not bracket the target: {reason}")]
    NonBracketing {
        lo: f64,
        hi: f64,
        reason: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, AccountantError>;

pub(crate) fn check(
    cond: bool,
    name: &'static str,
    value: f64,
    reason: &'static str,
) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(AccountantError::InvalidArgument {
            name,
            value,
            reason,
        })
    }
}

/// Target (ε, δ) that an unlearning run must certify.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        check(
            epsilon > 0.0 && epsilon.is_finite(),
            "epsilon",
            epsilon,
            "must be positive and finite",
        )?;
        check(
            delta > 0.0 && delta < 1.0,
            "delta",
            delta,
            "must lie in (0, 1)",
        )?;
        Ok(Self { epsilon, delta })
    }

    pub fn log_inv_delta(&self) -> f64 {
        -self.delta.ln()
    }
}

impl Default for PrivacyBudget {
    /// ε = 1, δ = 10⁻⁵.
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: 1e-5,
        }
    }
}

impl fmt::Display for PrivacyBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(ε={}, δ={:e})", self.epsilon, self.delta)
    }
}

/// Clip radii: `c0` for the initial model, `c1` for per-step gradients
/// (gradient clipping), `c2` for per-step iterates (model clipping).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipRadii {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ClipRadii {
    pub fn new(c0: f64, c1: f64, c2: f64) -> Result<Self> {
        check(c0 > 0.0, "c0", c0, "must be positive")?;
        check(c1 >= 0.0, "c1", c1, "must be nonnegative")?;
        check(c2 >= 0.0, "c2", c2, "must be nonnegative")?;
        Ok(Self { c0, c1, c2 })
    }

    pub fn gradient(c0: f64, c1: f64) -> Result<Self> {
        Self::new(c0, c1, 0.0)
    }

    pub fn model(c0: f64, c2: f64) -> Result<Self> {
        Self::new(c0, 0.0, c2)
    }
}

/// Per-step learning rates and noise magnitudes of a noisy fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnSchedule {
    pub gammas: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Initial noise (model clipping only).
    pub sigma0: f64,
    pub lambda: f64,
    pub radii: ClipRadii,
}

impl UnlearnSchedule {
    pub fn new(
        gammas: Vec<f64>,
        sigmas: Vec<f64>,
        sigma0: f64,
        lambda: f64,
        radii: ClipRadii,
    ) -> Result<Self> {
        let schedule = Self {
            gammas,
            sigmas,
            sigma0,
            lambda,
            radii,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Constant step size and noise for `steps` steps.
    pub fn constant(
        steps: usize,
        gamma: f64,
        sigma: f64,
        lambda: f64,
        radii: ClipRadii,
    ) -> Result<Self> {
        Self::new(vec![gamma; steps], vec![sigma; steps], 0.0, lambda, radii)
    }

    pub fn steps(&self) -> usize {
        self.gammas.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(AccountantError::InvalidSchedule(
                "schedule has no steps".into(),
            ));
        }
        if self.gammas.len() != self.sigmas.len() {
            return Err(AccountantError::InvalidSchedule(format!(
                "{} step sizes but {} noise magnitudes",
                self.gammas.len(),
                self.sigmas.len()
            )));
        }
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "lambda",
            self.lambda,
            "must be nonnegative",
        )?;
        check(
            self.sigma0 >= 0.0,
            "sigma0",
            self.sigma0,
            "must be nonnegative",
        )?;
        for &g in &self.gammas {
            check(g >= 0.0 && g.is_finite(), "gamma", g, "must be nonnegative")?;
        }
        for &s in &self.sigmas {
            check(s > 0.0 && s.is_finite(), "sigma", s, "must be positive")?;
        }
        Ok(())
    }

    /// `γ_t·λ < 1` for every step, the precondition of the Rényi bound.
    pub fn check_contractive(&self) -> Result<()> {
        for (t, &g) in self.gammas.iter().enumerate() {
            if g * self.lambda >= 1.0 {
                return Err(AccountantError::HypothesisViolated {
                    hypothesis: "γ_t·λ < 1 at every step",
                    detail: format!("step {t}: γλ = {}", g * self.lambda),
                });
            }
        }
        Ok(())
    }
}

/// Which closed form or bound produced a calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    GaussianMechanism,
    GradientClipping,
    GradientClippingRegularized,
    ModelClippingSteps,
    ModelClippingNoise,
    RenyiAmplification,
    GroupDp,
}

impl Formula {
    pub fn describe(&self) -> &'static str {
        match self {
            Formula::GaussianMechanism => "Gaussian mechanism: σ² = 8·C₀²·ln(1.25/δ)/ε²",
            Formula::GradientClipping => {
                "gradient clipping, λ = 0: σ² = 9·ln(1/δ)·(C₀ + C₁γT)²/(ε²T)"
            }
            Formula::GradientClippingRegularized => {
                "gradient clipping, λ > 0: σ² = 72·γλ·ln(1/δ)·(C₀(1−γλ)^T + C₁/λ)²/ε²"
            }
            Formula::ModelClippingSteps => {
                "model clipping: T ≥ (ln(1/δ) + ln θ_ε(2C₀/σ₀)) / ln(1/θ_ε(2C₂/σ))"
            }
            Formula::ModelClippingNoise => {
                "model clipping: σ² = 8C₂²ln(1.25)/ε²·[1 + (ln(1.25/δ) − σ₀²ε²/(8C₀²))/T]"
            }
            Formula::RenyiAmplification => {
                "shifted Rényi amplification bound + Rényi→DP conversion (bisection)"
            }
            Formula::GroupDp => "group-privacy DP-SGD: σ² = 2C²k²(ln(1.25k/δ) + kε)/ε²",
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub sigma: f64,
    pub steps: u64,
    pub method: Method,
    pub certified_budget: PrivacyBudget,
    pub formula: Formula,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_rejects_out_of_range() {
        assert!(PrivacyBudget::new(0.0, 1e-5).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY, 0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1e-5).is_ok());
    }

    #[test]
    fn schedule_validation() {
        let radii = ClipRadii::gradient(1.0, 1.0).unwrap();
        assert!(UnlearnSchedule::new(vec![0.1; 3], vec![1.0; 2], 0.0, 0.0, radii).is_err());
        assert!(UnlearnSchedule::new(vec![], vec![], 0.0, 0.0, radii).is_err());
        assert!(UnlearnSchedule::constant(3, 0.1, 0.0, 0.0, radii).is_err());
        let s = UnlearnSchedule::constant(3, 0.5, 1.0, 2.0, radii).unwrap();
        assert!(s.check_contractive().is_err());
        let s = UnlearnSchedule::constant(3, 0.4, 1.0, 2.0, radii).unwrap();
        assert!(s.check_contractive().is_ok());
    }

    #[test]
    fn radii_validation() {
        assert!(ClipRadii::new(0.0, 1.0, 0.0).is_err());
        assert!(ClipRadii::new(1.0, -1.0, 0.0).is_err());
    }
}
