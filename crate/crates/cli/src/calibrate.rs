use clap::Args;

use certun_core::accountant::{
    calibrate_gradient_clipping, calibrate_gradient_clipping_regularized,
    calibrate_gradient_clipping_regularized_unchecked, calibrate_gradient_clipping_unchecked,
    calibrate_model_clipping, calibrate_model_clipping_unchecked, calibrate_output_perturbation,
    calibrate_output_perturbation_unchecked, calibrate_sigma_via_renyi, group_dp_sigma,
    min_steps_model_clipping, optimal_steps_gradient_clipping, CalibrationResult, ClipRadii,
    Formula, PrivacyBudget, SigmaShape, StepPlan,
};
use certun_core::method::Method;

use crate::error::{CliError, Result};
use crate::output::fmt_float;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub method: Method,

    #[arg(long)]
    pub eps: f64,

    #[arg(long)]
    pub delta: f64,

    /// Initial-model clip radius.
    #[arg(long)]
    pub c0: Option<f64>,

    /// Gradient clip radius (gradient clipping).
    #[arg(long)]
    pub c1: Option<f64>,

    /// Iterate clip radius (model clipping).
    #[arg(long)]
    pub c2: Option<f64>,

    #[arg(long)]
    pub gamma: Option<f64>,

    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,

    /// Number of noisy steps; gradient clipping defaults to the optimum
    /// C₀/(γC₁), model clipping to the fewest steps certifying `--sigma`.
    #[arg(long)]
    pub t: Option<u64>,

    /// Initial noise (model clipping).
    #[arg(long, default_value_t = 0.0)]
    pub sigma0: f64,

    /// Per-step noise to find a step count for (model clipping).
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Group size (group-DP SGD).
    #[arg(long, default_value_t = 1)]
    pub k: u64,

    /// Per-example clip norm (group-DP SGD).
    #[arg(long)]
    pub clip: Option<f64>,

    /// Calibrate gradient clipping numerically on the Rényi bound instead of
    /// by closed form.
    #[arg(long)]
    pub renyi: bool,

    /// Evaluate closed forms even when their hypotheses fail.
    #[arg(long)]
    pub force: bool,
}

fn need(value: Option<f64>, flag: &str, method: Method) -> Result<f64> {
    value.ok_or_else(|| CliError::Config(format!("--{flag} is required for {method}")))
}

pub fn calibrate(a: &CalibrateArgs) -> Result<CalibrationResult> {
    let budget = PrivacyBudget::new(a.eps, a.delta)?;
    let m = a.method;
    let done = |sigma: f64, steps: u64, formula: Formula| CalibrationResult {
        sigma,
        steps,
        method: m,
        certified_budget: budget,
        formula,
    };
    match m {
        Method::OutputPerturbation => {
            let c0 = need(a.c0, "c0", m)?;
            let sigma = if a.force {
                calibrate_output_perturbation_unchecked(&budget, c0)?
            } else {
                calibrate_output_perturbation(&budget, c0)?
            };
            Ok(done(sigma, 0, Formula::GaussianMechanism))
        }
        Method::GradientClipping => {
            let (c0, c1, gamma) = (
                need(a.c0, "c0", m)?,
                need(a.c1, "c1", m)?,
                need(a.gamma, "gamma", m)?,
            );
            let steps = match a.t {
                Some(t) => t,
                None => optimal_steps_gradient_clipping(c0, c1, gamma)?.integer,
            };
            if a.renyi {
                let plan = StepPlan::constant(
                    steps as usize,
                    gamma,
                    a.lambda,
                    ClipRadii::gradient(c0, c1)?,
                );
                return Ok(calibrate_sigma_via_renyi(
                    &budget,
                    &plan,
                    &SigmaShape::Constant,
                )?);
            }
            if a.lambda == 0.0 {
                let sigma = if a.force {
                    calibrate_gradient_clipping_unchecked(&budget, steps, c0, c1, gamma)?
                } else {
                    calibrate_gradient_clipping(&budget, steps, c0, c1, gamma)?
                };
                Ok(done(sigma, steps, Formula::GradientClipping))
            } else {
                let sigma = if a.force {
                    calibrate_gradient_clipping_regularized_unchecked(
                        &budget, steps, c0, c1, gamma, a.lambda,
                    )?
                } else {
                    calibrate_gradient_clipping_regularized(
                        &budget, steps, c0, c1, gamma, a.lambda,
                    )?
                };
                Ok(done(sigma, steps, Formula::GradientClippingRegularized))
            }
        }
        Method::ModelClipping => {
            let (c0, c2) = (need(a.c0, "c0", m)?, need(a.c2, "c2", m)?);
            match (a.t, a.sigma) {
                (Some(t), _) => {
                    let n = if a.force {
                        calibrate_model_clipping_unchecked(&budget, t, c0, c2, a.sigma0)?
                    } else {
                        calibrate_model_clipping(&budget, t, c0, c2, a.sigma0)?
                    };
                    if n.clamped {
                        eprintln!(
                            "warning: σ₀ alone exceeds the output-perturbation level; σ clamped"
                        );
                    }
                    Ok(done(n.sigma, t, Formula::ModelClippingNoise))
                }
                (None, Some(sigma)) => {
                    let t = min_steps_model_clipping(&budget, c0, c2, a.sigma0, sigma)?;
                    Ok(done(sigma, t, Formula::ModelClippingSteps))
                }
                (None, None) => Err(CliError::Config(
                    "model clipping needs --t or --sigma".into(),
                )),
            }
        }
        Method::DpSgdGroup => {
            let c = need(a.clip, "clip", m)?;
            Ok(done(group_dp_sigma(&budget, a.k, c)?, 0, Formula::GroupDp))
        }
        Method::Retrain | Method::FinetuneOnly => Err(CliError::Config(format!(
            "{m} adds no noise; nothing to calibrate"
        ))),
    }
}

pub fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let r = calibrate(&args)?;
    println!("method: {}", r.method);
    println!("sigma: {}", fmt_float(r.sigma));
    println!("steps: {}", r.steps);
    println!("formula: {}", r.formula);
    println!("budget: {}", r.certified_budget);
    Ok(())
}
