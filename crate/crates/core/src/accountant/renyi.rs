//! Rényi amplification-by-iteration bound for noisy clipped-gradient
//! fine-tuning, Rényi→DP conversion and σ calibration by bisection.
//!
//! Two runs started at most `z₀ = 2C₀` apart are tracked through a shift
//! `z`. Step `t` contracts the shift by `ρ_t = 1 − γ_tλ`, adds `s_t = 2γ_tC₁`
//! (the clipped gradients can disagree by at most that much) and spends
//! `a_t` of it against the injected noise at Rényi cost `q·a_t²/(2σ_t²)`.
//! Driving the shift to zero at step `T` bounds `D_q` between the two final
//! iterates.

use super::{
    check, AccountantError, CalibrationResult, ClipRadii, Formula, PrivacyBudget, Result,
    UnlearnSchedule,
};
use crate::method::Method;

/// Step sizes, regularization and radii of a run whose noise is still to be
/// calibrated.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub gammas: Vec<f64>,
    pub lambda: f64,
    pub radii: ClipRadii,
}

impl StepPlan {
    pub fn constant(steps: usize, gamma: f64, lambda: f64, radii: ClipRadii) -> Self {
        Self {
            gammas: vec![gamma; steps],
            lambda,
            radii,
        }
    }

    pub fn steps(&self) -> usize {
        self.gammas.len()
    }

    pub fn with_sigmas(&self, sigmas: Vec<f64>) -> Result<UnlearnSchedule> {
        UnlearnSchedule::new(self.gammas.clone(), sigmas, 0.0, self.lambda, self.radii)
    }
}

/// Shape of the noise profile searched by [`calibrate_sigma_via_renyi`].
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaShape {
    /// The same σ at every step.
    Constant,
    /// `σ_t = σ·profile[t]`; only the common factor σ is searched.
    Profile(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenyiPoint {
    pub order: f64,
    pub divergence_bound: f64,
}

impl RenyiPoint {
    /// `D_q / q`, the coefficient fed to [`renyi_to_dp`].
    pub fn slope(&self) -> f64 {
        self.divergence_bound / self.order
    }
}

/// The shift bookkeeping of a schedule, with the allocation minimizing
/// `Σ a_t²/σ_t²` under the terminal-shift constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSchedule {
    pub rhos: Vec<f64>,
    pub shifts: Vec<f64>,
    pub allocations: Vec<f64>,
    pub initial_shift: f64,
    sigmas: Vec<f64>,
}

impl ShiftSchedule {
    pub fn optimal(schedule: &UnlearnSchedule) -> Result<Self> {
        schedule.validate()?;
        schedule.check_contractive()?;
        let rhos: Vec<f64> = schedule
            .gammas
            .iter()
            .map(|g| 1.0 - g * schedule.lambda)
            .collect();
        let shifts: Vec<f64> = schedule
            .gammas
            .iter()
            .map(|g| 2.0 * g * schedule.radii.c1)
            .collect();
        let initial_shift = 2.0 * schedule.radii.c0;
        let weights = suffix_products(&rhos);
        let budget = total_shift(&rhos, &shifts, &weights, initial_shift);
        let denom: f64 = weights
            .iter()
            .zip(&schedule.sigmas)
            .map(|(w, s)| w * w * s * s)
            .sum();
        let allocations = weights
            .iter()
            .zip(&schedule.sigmas)
            .map(|(w, s)| budget * w * s * s / denom)
            .collect();
        Ok(Self {
            rhos,
            shifts,
            allocations,
            initial_shift,
            sigmas: schedule.sigmas.clone(),
        })
    }

    /// Weight of step `t` in the terminal shift: `Π_{k=t+1}^{T−1} ρ_k`.
    pub fn weights(&self) -> Vec<f64> {
        suffix_products(&self.rhos)
    }

    /// Relative mismatch between `Σ w_t a_t` and the shift to be absorbed.
    pub fn constraint_residual(&self) -> f64 {
        let w = self.weights();
        let target = total_shift(&self.rhos, &self.shifts, &w, self.initial_shift);
        let spent: f64 = w.iter().zip(&self.allocations).map(|(w, a)| w * a).sum();
        (spent - target).abs() / target.abs().max(f64::MIN_POSITIVE)
    }

    /// Shift after each step, `z_{t+1} = ρ_t z_t + s_t − a_t`, starting at
    /// `z₀`. Returns `T + 1` values; the last one is zero up to rounding.
    pub fn shift_trace(&self) -> Vec<f64> {
        let mut z = self.initial_shift;
        let mut out = Vec::with_capacity(self.rhos.len() + 1);
        out.push(z);
        for ((r, s), a) in self.rhos.iter().zip(&self.shifts).zip(&self.allocations) {
            z = r * z + s - a;
            out.push(z);
        }
        out
    }

    pub fn terminal_shift(&self) -> f64 {
        *self.shift_trace().last().unwrap()
    }

    /// `Σ q·a_t²/(2σ_t²)`.
    pub fn renyi_cost(&self, order: f64) -> f64 {
        self.allocations
            .iter()
            .zip(&self.sigmas)
            .map(|(a, s)| order * a * a / (2.0 * s * s))
            .sum()
    }
}

fn suffix_products(rhos: &[f64]) -> Vec<f64> {
    let mut w = vec![1.0; rhos.len()];
    for t in (0..rhos.len().saturating_sub(1)).rev() {
        w[t] = w[t + 1] * rhos[t + 1];
    }
    w
}

fn total_shift(rhos: &[f64], shifts: &[f64], weights: &[f64], initial: f64) -> f64 {
    let contraction: f64 = rhos.iter().product();
    contraction * initial + weights.iter().zip(shifts).map(|(w, s)| w * s).sum::<f64>()
}

/// Upper bound on `D_q` between the outputs of two gradient-clipping runs
/// whose starting points are within `2C₀`.
///
/// `(q/2)·[(Πρ_t)·2C₀ + Σ w_t s_t]² / Σ w_t²σ_t²` with
/// `w_t = Π_{k=t+1}^{T−1} ρ_k`. Requires `γ_tλ < 1` at every step.
pub fn renyi_bound(order: f64, schedule: &UnlearnSchedule) -> Result<RenyiPoint> {
    check(
        order >= 1.0 && order.is_finite(),
        "order",
        order,
        "must be at least 1",
    )?;
    schedule.validate()?;
    schedule.check_contractive()?;
    let rhos: Vec<f64> = schedule
        .gammas
        .iter()
        .map(|g| 1.0 - g * schedule.lambda)
        .collect();
    let shifts: Vec<f64> = schedule
        .gammas
        .iter()
        .map(|g| 2.0 * g * schedule.radii.c1)
        .collect();
    let weights = suffix_products(&rhos);
    let budget = total_shift(&rhos, &shifts, &weights, 2.0 * schedule.radii.c0);
    let denom: f64 = weights
        .iter()
        .zip(&schedule.sigmas)
        .map(|(w, s)| w * w * s * s)
        .sum();
    Ok(RenyiPoint {
        order,
        divergence_bound: 0.5 * order * budget * budget / denom,
    })
}

/// Closed form of [`renyi_bound`] for a constant schedule:
/// `(q/2)(1−ρ²)[2C₀ρ^T + s(1−ρ^T)/(1−ρ)]² / (σ²(1−ρ^{2T}))`, and
/// `(q/2)(2C₀ + sT)²/(σ²T)` when `λ = 0`.
pub fn renyi_bound_constant(
    order: f64,
    steps: u64,
    gamma: f64,
    sigma: f64,
    lambda: f64,
    c0: f64,
    c1: f64,
) -> Result<RenyiPoint> {
    check(
        order >= 1.0 && order.is_finite(),
        "order",
        order,
        "must be at least 1",
    )?;
    check(steps >= 1, "steps", steps as f64, "must be at least 1")?;
    check(
        gamma >= 0.0 && gamma.is_finite(),
        "gamma",
        gamma,
        "must be nonnegative",
    )?;
    check(
        sigma > 0.0 && sigma.is_finite(),
        "sigma",
        sigma,
        "must be positive",
    )?;
    check(
        lambda >= 0.0 && lambda.is_finite(),
        "lambda",
        lambda,
        "must be nonnegative",
    )?;
    check(c0 > 0.0, "c0", c0, "must be positive")?;
    check(c1 >= 0.0, "c1", c1, "must be nonnegative")?;
    let x = gamma * lambda;
    if x >= 1.0 {
        return Err(AccountantError::HypothesisViolated {
            hypothesis: "γ_t·λ < 1 at every step",
            detail: format!("γλ = {x}"),
        });
    }
    let t = steps as f64;
    let s = 2.0 * gamma * c1;
    let bound = if x == 0.0 {
        0.5 * order * (2.0 * c0 + s * t).powi(2) / (sigma * sigma * t)
    } else {
        let log_rho = (-x).ln_1p();
        let rho_t = (t * log_rho).exp();
        // (1 − ρ^T)/(1 − ρ) and (1 − ρ²)/(1 − ρ^{2T}) without cancellation.
        let geometric = -(t * log_rho).exp_m1() / x;
        let ratio = x * (2.0 - x) / -(2.0 * t * log_rho).exp_m1();
        0.5 * order * ratio * (2.0 * c0 * rho_t + s * geometric).powi(2) / (sigma * sigma)
    };
    Ok(RenyiPoint {
        order,
        divergence_bound: bound,
    })
}

/// An (ε, δ) guarantee obtained from a Rényi curve, with the optimizing order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConversion {
    pub epsilon: f64,
    pub order: f64,
}

/// Converts `D_q ≤ q·c` for all `q > 1` into (ε, δ):
/// `ε = min_q [q·c + ln(1/δ)/(q−1)] = c + 2√(c·ln(1/δ))`, at
/// `q = 1 + √(ln(1/δ)/c)`.
pub fn renyi_to_dp(c: f64, delta: f64) -> Result<DpConversion> {
    check(
        c >= 0.0 && c.is_finite(),
        "c",
        c,
        "must be nonnegative and finite",
    )?;
    check(
        delta > 0.0 && delta < 1.0,
        "delta",
        delta,
        "must lie in (0, 1)",
    )?;
    let l = -delta.ln();
    if c == 0.0 {
        return Ok(DpConversion {
            epsilon: 0.0,
            order: f64::INFINITY,
        });
    }
    Ok(DpConversion {
        epsilon: c + 2.0 * (c * l).sqrt(),
        order: 1.0 + (l / c).sqrt(),
    })
}

/// Largest Rényi slope `c` that [`renyi_to_dp`] maps to at most `ε`.
pub fn renyi_slope_for_epsilon(epsilon: f64, delta: f64) -> Result<f64> {
    check(
        epsilon > 0.0 && epsilon.is_finite(),
        "epsilon",
        epsilon,
        "must be positive",
    )?;
    check(
        delta > 0.0 && delta < 1.0,
        "delta",
        delta,
        "must lie in (0, 1)",
    )?;
    let l = -delta.ln();
    // √c = √(L + ε) − √L, rationalized.
    let root = epsilon / ((l + epsilon).sqrt() + l.sqrt());
    Ok(root * root)
}

/// The ε certified at `δ` by [`renyi_bound`] and [`renyi_to_dp`].
pub fn certify_schedule(schedule: &UnlearnSchedule, delta: f64) -> Result<DpConversion> {
    let point = renyi_bound(1.0, schedule)?;
    renyi_to_dp(point.slope(), delta)
}

const SIGMA_LO: f64 = 1e-8;
const SIGMA_HI: f64 = 1e4;
const REL_TOL: f64 = 1e-6;
const MAX_ITER: usize = 200;

/// Smallest σ (up to a relative tolerance of 10⁻⁶) for which the schedule
/// certifies `budget`, by geometric bisection on `[10⁻⁸, 10⁴]`.
///
/// Only needs `γ_tλ < 1`. The returned σ certifies the budget while
/// `σ·(1 − 10⁻⁵)` does not.
pub fn calibrate_sigma_via_renyi(
    budget: &PrivacyBudget,
    plan: &StepPlan,
    shape: &SigmaShape,
) -> Result<CalibrationResult> {
    let steps = plan.steps();
    let profile = match shape {
        SigmaShape::Constant => vec![1.0; steps],
        SigmaShape::Profile(p) => {
            if p.len() != steps {
                return Err(AccountantError::InvalidSchedule(format!(
                    "{} step sizes but a noise profile of length {}",
                    steps,
                    p.len()
                )));
            }
            p.clone()
        }
    };
    let certified = |sigma: f64| -> Result<f64> {
        let schedule = plan.with_sigmas(profile.iter().map(|p| p * sigma).collect())?;
        Ok(certify_schedule(&schedule, budget.delta)?.epsilon)
    };
    let (mut lo, mut hi) = (SIGMA_LO, SIGMA_HI);
    if certified(hi)? > budget.epsilon {
        return Err(AccountantError::NonBracketing {
            lo,
            hi,
            reason: "largest σ does not certify",
        });
    }
    if certified(lo)? <= budget.epsilon {
        return Err(AccountantError::NonBracketing {
            lo,
            hi,
            reason: "smallest σ already certifies",
        });
    }
    for _ in 0..MAX_ITER {
        if hi / lo - 1.0 <= REL_TOL {
            break;
        }
        let mid = (lo * hi).sqrt();
        if certified(mid)? <= budget.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let epsilon = certified(hi)?;
    Ok(CalibrationResult {
        sigma: hi,
        steps: steps as u64,
        method: Method::GradientClipping,
        certified_budget: PrivacyBudget {
            epsilon,
            delta: budget.delta,
        },
        formula: Formula::RenyiAmplification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::{calibrate_gradient_clipping, calibrate_gradient_clipping_regularized};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn radii(c0: f64, c1: f64) -> ClipRadii {
        ClipRadii::gradient(c0, c1).unwrap()
    }

    #[test]
    fn single_step_reduction() {
        let s = UnlearnSchedule::constant(1, 0.0, 1.0, 0.0, radii(1.0, 5.0)).unwrap();
        assert_eq!(renyi_bound(2.0, &s).unwrap().divergence_bound, 4.0);
    }

    #[test]
    fn single_step_is_tight() {
        for (c0, sigma, q) in [(1.0, 1.0, 2.0), (0.3, 2.5, 7.0), (4.0, 0.1, 1.5)] {
            let s = UnlearnSchedule::constant(1, 0.0, sigma, 0.0, radii(c0, 1.0)).unwrap();
            let b = renyi_bound(q, &s).unwrap().divergence_bound;
            let exact = certun_oracle::gaussian_renyi(q, 2.0 * c0, sigma);
            assert!(rel(b, exact) < 1e-14);
        }
    }

    #[test]
    fn linear_in_order() {
        let s = UnlearnSchedule::new(
            vec![0.1, 0.2, 0.05, 0.3],
            vec![1.0, 0.5, 2.0, 1.5],
            0.0,
            0.7,
            radii(1.0, 3.0),
        )
        .unwrap();
        let one = renyi_bound(3.0, &s).unwrap().divergence_bound;
        let two = renyi_bound(6.0, &s).unwrap().divergence_bound;
        assert!(rel(two / one, 2.0) < 1e-12);
    }

    #[test]
    fn general_matches_constant_closed_form() {
        let cases = [
            (1, 0.01, 1.0, 0.0, 1.0, 1.0),
            (50, 0.01, 0.7, 0.0, 2.0, 3.0),
            (6, 1e-4, 0.007752, 750.0, 0.01, 10.0),
            (20, 0.75, 1.3, 1.0, 1.0, 1.0),
            (300, 0.002, 4.0, 3.0, 0.5, 20.0),
            (17, 1e-3, 0.25, 1e-9, 1.0, 1.0),
        ];
        for (t, gamma, sigma, lambda, c0, c1) in cases {
            let s = UnlearnSchedule::constant(t, gamma, sigma, lambda, radii(c0, c1)).unwrap();
            let general = renyi_bound(2.0, &s).unwrap().divergence_bound;
            let closed = renyi_bound_constant(2.0, t as u64, gamma, sigma, lambda, c0, c1)
                .unwrap()
                .divergence_bound;
            assert!(
                rel(general, closed) < 1e-12,
                "T={t} γ={gamma} λ={lambda}: {general} vs {closed}"
            );
        }
    }

    #[test]
    fn rejects_expansive_steps() {
        let s = UnlearnSchedule::constant(3, 0.5, 1.0, 2.0, radii(1.0, 1.0)).unwrap();
        assert!(renyi_bound(2.0, &s).is_err());
        assert!(renyi_bound_constant(2.0, 3, 0.5, 1.0, 2.0, 1.0, 1.0).is_err());
        let ok = UnlearnSchedule::constant(3, 0.1, 1.0, 2.0, radii(1.0, 1.0)).unwrap();
        assert!(renyi_bound(0.5, &ok).is_err());
    }

    #[test]
    fn optimal_allocation_meets_constraint() {
        let s = UnlearnSchedule::new(
            vec![0.1, 0.4, 0.05, 0.3, 0.2],
            vec![1.0, 0.5, 2.0, 1.5, 0.8],
            0.0,
            1.5,
            radii(2.0, 3.0),
        )
        .unwrap();
        let shift = ShiftSchedule::optimal(&s).unwrap();
        assert!(shift.constraint_residual() < 1e-10);
        assert!(shift.terminal_shift().abs() < 1e-10 * shift.initial_shift);
        assert!(shift.allocations.iter().all(|&a| a >= 0.0));
        let cost = shift.renyi_cost(3.0);
        assert!(rel(cost, renyi_bound(3.0, &s).unwrap().divergence_bound) < 1e-12);
    }

    #[test]
    fn conversion_examples() {
        let d = renyi_to_dp(1.0, 1e-5).unwrap();
        // 1 + 2√(ln 10⁵), evaluated at 40 digits.
        assert!(rel(d.epsilon, 7.786_140_424_415_112) < 1e-14);
        assert!(rel(d.order, 1.0 + (1e5f64).ln().sqrt()) < 1e-14);
        assert!(renyi_to_dp(1.0, 1.0 - 1e-12).unwrap().epsilon - 1.0 < 1e-5);
        assert!(renyi_to_dp(1.0, 1e-8).unwrap().epsilon > d.epsilon);
        assert_eq!(renyi_to_dp(0.0, 1e-5).unwrap().epsilon, 0.0);
        assert!(renyi_to_dp(-1.0, 1e-5).is_err());
    }

    #[test]
    fn conversion_matches_grid_search() {
        for c in [0.01, 0.3, 1.0, 4.0] {
            let exact = renyi_to_dp(c, 1e-5).unwrap().epsilon;
            let (grid, _) = certun_oracle::grid_renyi_conversion(c, 1e-5, 1e3, 2_000_000);
            assert!(rel(grid, exact) < 1e-6, "c={c}: {grid} vs {exact}");
        }
    }

    #[test]
    fn slope_inverts_conversion() {
        for eps in [0.1, 1.0, 7.786_140_424_415_112, 50.0] {
            let c = renyi_slope_for_epsilon(eps, 1e-5).unwrap();
            assert!(rel(renyi_to_dp(c, 1e-5).unwrap().epsilon, eps) < 1e-13);
        }
        assert!(
            (renyi_slope_for_epsilon(7.786_140_424_415_112, 1e-5).unwrap() - 1.0).abs() < 1e-13
        );
    }

    #[test]
    fn calibration_inverts_the_slope_example() {
        let budget = PrivacyBudget::new(7.786_140_424_415_112, 1e-5).unwrap();
        let plan = StepPlan::constant(1, 0.0, 0.0, radii(1.0, 1.0));
        let r = calibrate_sigma_via_renyi(&budget, &plan, &SigmaShape::Constant).unwrap();
        assert!(rel(r.sigma, std::f64::consts::SQRT_2) < 2e-6);
        assert!(r.certified_budget.epsilon <= budget.epsilon);
        assert_eq!(r.formula, Formula::RenyiAmplification);
    }

    #[test]
    fn calibration_is_minimal() {
        let budget = PrivacyBudget::default();
        let plan = StepPlan::constant(12, 0.05, 2.0, radii(1.0, 4.0));
        let r = calibrate_sigma_via_renyi(&budget, &plan, &SigmaShape::Constant).unwrap();
        let at = |s: f64| {
            certify_schedule(&plan.with_sigmas(vec![s; 12]).unwrap(), 1e-5)
                .unwrap()
                .epsilon
        };
        assert!(at(r.sigma) <= 1.0);
        assert!(at(r.sigma * (1.0 - 1e-5)) > 1.0);
        // The bound scales as 1/σ², so the search has a closed-form answer.
        let c = renyi_bound(1.0, &plan.with_sigmas(vec![1.0; 12]).unwrap())
            .unwrap()
            .divergence_bound;
        let target = renyi_slope_for_epsilon(1.0, 1e-5).unwrap();
        assert!(rel(r.sigma, (c / target).sqrt()) < 2e-6);
        let doubled = PrivacyBudget::new(2.0, 1e-5).unwrap();
        assert!(
            calibrate_sigma_via_renyi(&doubled, &plan, &SigmaShape::Constant)
                .unwrap()
                .sigma
                < r.sigma
        );
    }

    #[test]
    fn calibration_with_profile() {
        let budget = PrivacyBudget::default();
        let plan = StepPlan::constant(3, 0.1, 1.0, radii(1.0, 1.0));
        let r =
            calibrate_sigma_via_renyi(&budget, &plan, &SigmaShape::Profile(vec![2.0, 1.0, 1.0]))
                .unwrap();
        let s = plan
            .with_sigmas(vec![2.0 * r.sigma, r.sigma, r.sigma])
            .unwrap();
        assert!(certify_schedule(&s, 1e-5).unwrap().epsilon <= 1.0);
        assert!(
            calibrate_sigma_via_renyi(&budget, &plan, &SigmaShape::Profile(vec![1.0])).is_err()
        );
    }

    #[test]
    fn calibration_reports_non_bracketing() {
        let budget = PrivacyBudget::new(1e-6, 1e-5).unwrap();
        let plan = StepPlan::constant(1, 0.0, 0.0, radii(1e6, 1.0));
        assert!(matches!(
            calibrate_sigma_via_renyi(&budget, &plan, &SigmaShape::Constant),
            Err(AccountantError::NonBracketing { .. })
        ));
    }

    #[test]
    fn closed_forms_are_conservative() {
        let budget = PrivacyBudget::default();
        for (t, c0, c1, gamma) in [
            (1, 1.0, 1.0, 0.001),
            (100, 1.0, 1.0, 0.01),
            (7, 0.01, 100.0, 1e-4),
        ] {
            let sigma = calibrate_gradient_clipping(&budget, t, c0, c1, gamma).unwrap();
            let s =
                UnlearnSchedule::constant(t as usize, gamma, sigma, 0.0, radii(c0, c1)).unwrap();
            assert!(certify_schedule(&s, budget.delta).unwrap().epsilon <= budget.epsilon);
        }
        for (t, c0, c1, gamma, lambda) in [(2, 1.0, 1.0, 0.75, 1.0), (40, 0.5, 3.0, 0.06, 10.0)] {
            let sigma =
                calibrate_gradient_clipping_regularized(&budget, t, c0, c1, gamma, lambda).unwrap();
            let s =
                UnlearnSchedule::constant(t as usize, gamma, sigma, lambda, radii(c0, c1)).unwrap();
            assert!(certify_schedule(&s, budget.delta).unwrap().epsilon <= budget.epsilon);
        }
    }

    // The gradient-clipping noise levels listed for the MNIST and CIFAR
    // runs all sit exactly at Rényi slope c = 1 under this bound.
    #[test]
    fn published_gradient_clipping_rows_sit_at_unit_slope() {
        let rows = [
            (1, 1e-4, 10.0, 100.0, 0.01, 0.028_270),
            (6, 1e-4, 750.0, 10.0, 0.01, 0.007_752),
            (1, 1e-3, 200.0, 100.0, 0.1, 0.254_558),
        ];
        for (t, gamma, lambda, c1, c0, sigma) in rows {
            let s = UnlearnSchedule::constant(t, gamma, sigma, lambda, radii(c0, c1)).unwrap();
            let c = renyi_bound(1.0, &s).unwrap().slope();
            assert!((c - 1.0).abs() < 1e-4, "row T={t} λ={lambda}: c = {c}");
        }
    }
}
