//! Verification suites: the accountant and the network engine checked
//! against the independent oracles.

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use certun_core::accountant::{
    calibrate_gradient_clipping, calibrate_gradient_clipping_regularized,
    calibrate_output_perturbation, calibrate_sigma_via_renyi, certify_schedule,
    gaussian_mechanism_sigma, hs_gaussians_exact, hs_gaussians_upper,
    optimal_steps_gradient_clipping, renyi_bound, renyi_bound_constant, renyi_to_dp, theta,
    ClipRadii, PrivacyBudget, SigmaShape, StepPlan, UnlearnSchedule,
};
use certun_core::nn::{loss, loss_and_grad, Batch, FlatVector, Init, Layer, NetworkSpec};
use certun_oracle::{
    brute_min_steps, central_difference_gradient, gaussian_renyi, grid_renyi_conversion,
    hs_quadrature, mc_hockey_stick, mc_renyi_moment, Gaussian1d,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Divergences,
    Calibration,
    Gradients,
    MechanismMc,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,

    /// Monte Carlo samples per estimate.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,

    /// Seed of the random configurations and Monte Carlo draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A worst-case deviation against its tolerance. `upper` checks pass when
/// `worst ≤ tolerance`, the others when `worst > tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
    pub upper: bool,
}

impl Check {
    fn at_most(name: &str, worst: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            worst,
            tolerance,
            upper: true,
        }
    }

    fn above(name: &str, worst: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            worst,
            tolerance,
            upper: false,
        }
    }

    pub fn pass(&self) -> bool {
        if self.upper {
            self.worst <= self.tolerance
        } else {
            self.worst > self.tolerance
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn budget() -> PrivacyBudget {
    PrivacyBudget::new(1.0, 1e-5).expect("valid budget")
}

pub fn divergences() -> Result<Vec<Check>> {
    let mut hs = 0f64;
    for eps in [0.0, 0.5, 1.0, 2.0] {
        for r in [0.1, 1.0, 2.0, 5.0] {
            let quad =
                hs_quadrature(0.0, r, 1.0, eps).map_err(|e| CliError::Failed(e.to_string()))?;
            hs = hs.max((hs_gaussians_exact(eps, r, 1.0)? - quad).abs());
        }
    }
    let th = (theta(1.0, 2.0)? - 0.509_861).abs();

    let mut upper = 0f64;
    for eps in [0.1, 0.5, 1.0] {
        for r in [0.1, 0.5, 1.0, 2.0] {
            upper = upper.max(hs_gaussians_exact(eps, r, 1.0)? - hs_gaussians_upper(eps, r, 1.0)?);
        }
    }

    let mut tight = 0f64;
    for (c0, sigma, q) in [(1.0, 1.0, 2.0), (0.3, 2.0, 7.5), (5.0, 0.7, 1.0)] {
        let s = UnlearnSchedule::constant(1, 0.0, sigma, 0.0, ClipRadii::gradient(c0, 1.0)?)?;
        tight = tight.max(rel(
            renyi_bound(q, &s)?.divergence_bound,
            gaussian_renyi(q, 2.0 * c0, sigma),
        ));
    }

    let mut conversion = 0f64;
    for c in [0.01, 0.3, 1.0, 4.0] {
        let (grid, _) = grid_renyi_conversion(c, 1e-5, 1e3, 200_000);
        conversion = conversion.max(rel(grid, renyi_to_dp(c, 1e-5)?.epsilon));
    }

    Ok(vec![
        Check::at_most("hockey-stick closed form vs quadrature (abs)", hs, 1e-6),
        Check::at_most("θ_1(2) vs 0.509861 (abs)", th, 1e-6),
        Check::at_most("tail bound minus exact divergence", upper, 0.0),
        Check::at_most(
            "single-step Rényi bound vs Gaussian Rényi (rel)",
            tight,
            1e-12,
        ),
        Check::at_most("Rényi→DP conversion vs grid search (rel)", conversion, 1e-4),
    ])
}

pub fn calibration(seed: u64) -> Result<Vec<Check>> {
    let b = budget();
    let mut op = 0f64;
    for (c0, sigma) in [(0.01, 0.096_896), (0.1, 0.968_961), (1.0, 9.689_610)] {
        op = op.max((calibrate_output_perturbation(&b, c0)? - sigma).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut steps, mut closed) = (0f64, 0f64);
    for _ in 0..20 {
        let gamma = 10f64.powf(rng.random_range(-3.0..-1.0));
        let c1 = rng.random_range(0.5..20.0);
        let k = rng.random_range(1..400u64);
        let c0 = gamma * c1 * k as f64;
        let opt = optimal_steps_gradient_clipping(c0, c1, gamma)?;
        steps = steps.max((brute_min_steps(c0, c1, gamma, 10 * k + 10) as f64 - opt.real).abs());
        let sigma = calibrate_gradient_clipping(&b, k, c0, c1, gamma)?;
        closed = closed.max(rel(
            sigma * sigma,
            36.0 * gamma * c1 * c0 * b.log_inv_delta(),
        ));
    }

    let mut certified = 0f64;
    let mut renyi_excess = 0f64;
    for i in 0..20 {
        let t = rng.random_range(1..200u64);
        let c0 = rng.random_range(0.01..20.0);
        let c1 = rng.random_range(0.1..20.0);
        let (gamma, lambda, sigma) = if i % 2 == 0 {
            let gamma = 10f64.powf(rng.random_range(-4.0..-1.0));
            (
                gamma,
                0.0,
                calibrate_gradient_clipping(&b, t, c0, c1, gamma)?,
            )
        } else {
            let lambda = rng.random_range(1.0..100.0);
            let gamma = rng.random_range(0.51..0.99) / lambda;
            (
                gamma,
                lambda,
                calibrate_gradient_clipping_regularized(&b, t, c0, c1, gamma, lambda)?,
            )
        };
        let radii = ClipRadii::gradient(c0, c1)?;
        let s = UnlearnSchedule::constant(t as usize, gamma, sigma, lambda, radii)?;
        certified = certified.max(certify_schedule(&s, b.delta)?.epsilon);
        let plan = StepPlan::constant(t as usize, gamma, lambda, radii);
        let r = calibrate_sigma_via_renyi(&b, &plan, &SigmaShape::Constant)?;
        renyi_excess = renyi_excess.max(r.certified_budget.epsilon - b.epsilon);
    }

    let mut consistency = 0f64;
    for _ in 0..50 {
        let t = rng.random_range(1..100usize);
        let gamma = rng.random_range(0.0..0.1);
        let lambda = if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(0.0..9.0)
        };
        let sigma = rng.random_range(0.05..5.0);
        let (c0, c1) = (rng.random_range(0.1..10.0), rng.random_range(0.0..10.0));
        let s = UnlearnSchedule::constant(t, gamma, sigma, lambda, ClipRadii::gradient(c0, c1)?)?;
        let q = rng.random_range(1.0..50.0);
        let general = renyi_bound(q, &s)?.divergence_bound;
        let constant =
            renyi_bound_constant(q, t as u64, gamma, sigma, lambda, c0, c1)?.divergence_bound;
        consistency = consistency.max(rel(general, constant));
    }

    Ok(vec![
        Check::at_most("output-perturbation σ vs table (abs)", op, 1e-5),
        Check::at_most("brute-force optimal steps vs C₀/(γC₁)", steps, 1.0),
        Check::at_most("σ² at the optimum vs 36γC₁C₀ln(1/δ)/ε² (rel)", closed, 1e-9),
        Check::at_most("ε certified by closed-form σ", certified, b.epsilon),
        Check::at_most("ε overshoot of Rényi-calibrated σ", renyi_excess, 0.0),
        Check::at_most(
            "general vs constant-schedule Rényi bound (rel)",
            consistency,
            1e-12,
        ),
    ])
}

fn random_network(rng: &mut ChaCha8Rng, i: usize) -> Result<NetworkSpec> {
    let classes = rng.random_range(2..5);
    let (shape, layers, init) = match i % 3 {
        0 => {
            let inputs = rng.random_range(2..8);
            let hidden = rng.random_range(2..6);
            let layers = vec![
                Layer::Dense {
                    inputs,
                    outputs: hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: hidden,
                    outputs: classes,
                },
            ];
            (vec![inputs], layers, Init::HeNormal)
        }
        1 => {
            let layers = vec![
                Layer::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                },
                Layer::Relu,
                Layer::GlobalMean,
                Layer::Dense {
                    inputs: 3,
                    outputs: classes,
                },
            ];
            (vec![2, 4, 4], layers, Init::HeNormal)
        }
        _ => {
            let layers = vec![
                Layer::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                },
                Layer::Relu,
                Layer::AvgPool2,
                Layer::Flatten,
                Layer::Dense {
                    inputs: 8,
                    outputs: classes,
                },
            ];
            (vec![1, 4, 4], layers, Init::UniformDefault)
        }
    };
    NetworkSpec::new(shape, layers, classes, init).map_err(|e| CliError::Failed(e.to_string()))
}

/// Largest `|a − n| / max(|a|, |n|, 10⁻⁴)` between analytic and central
/// difference gradients.
fn gradient_error(spec: &NetworkSpec, rng: &mut ChaCha8Rng, n: usize) -> Result<f64> {
    let fail = |e: certun_core::nn::NnError| CliError::Failed(e.to_string());
    let params = spec.init(rng.random());
    let inputs = (0..n * spec.input_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let labels = (0..n)
        .map(|_| rng.random_range(0..spec.num_classes()))
        .collect();
    let batch = Batch::new(inputs, labels);
    let (_, grad) = loss_and_grad(&params, spec, &batch).map_err(fail)?;
    let numeric = central_difference_gradient(
        |v| {
            loss(
                &params.with_values(v.to_vec()).expect("same layout"),
                spec,
                &batch,
            )
            .expect("valid batch")
        },
        params.values(),
        1e-5,
    );
    Ok(grad
        .values
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-4))
        .fold(0.0, f64::max))
}

pub fn gradients(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tiny = 0f64;
    for i in 0..5 {
        let spec = random_network(&mut rng, i)?;
        tiny = tiny.max(gradient_error(&spec, &mut rng, 3)?);
    }
    let mnist = gradient_error(&NetworkSpec::mnist_tiny(10), &mut rng, 2)?;
    Ok(vec![
        Check::at_most("random tiny networks (rel)", tiny, 1e-5),
        Check::at_most("MNIST network (rel)", mnist, 1e-5),
    ])
}

pub fn mechanism_mc(samples: usize, seed: u64) -> Result<Vec<Check>> {
    let fail = |e: certun_oracle::OracleError| CliError::Failed(e.to_string());
    let b = PrivacyBudget::new(1.0, 0.05)?;
    let sigma = gaussian_mechanism_sigma(&b, 1.0)?;
    let est = mc_hockey_stick(
        &Gaussian1d::new(0.0, sigma),
        &Gaussian1d::new(1.0, sigma),
        b.epsilon,
        samples,
        seed,
    )
    .map_err(fail)?;
    let weak = 0.25 * sigma;
    let power = mc_hockey_stick(
        &Gaussian1d::new(0.0, weak),
        &Gaussian1d::new(1.0, weak),
        b.epsilon,
        samples,
        seed + 1,
    )
    .map_err(fail)?;
    let (q, dist, s) = (2.0, 1.0, 1.5);
    let moment = mc_renyi_moment(q, dist, s, samples, seed + 2).map_err(fail)?;
    let exact = ((q - 1.0) * gaussian_renyi(q, dist, s)).exp();
    Ok(vec![
        Check::at_most(
            "E_ε estimate minus (δ + 3·SE) at calibrated σ",
            est.value - b.delta - 3.0 * est.std_error,
            0.0,
        ),
        Check::above("E_ε estimate at σ/4 (must exceed δ)", power.value, b.delta),
        Check::at_most(
            "Rényi moment estimate vs closed form (standard errors)",
            (moment.value - exact).abs() / moment.std_error,
            4.0,
        ),
    ])
}

pub fn run_suite(suite: Suite, samples: usize, seed: u64) -> Result<Vec<(Suite, Vec<Check>)>> {
    let suites = match suite {
        Suite::All => vec![
            Suite::Divergences,
            Suite::Calibration,
            Suite::Gradients,
            Suite::MechanismMc,
        ],
        s => vec![s],
    };
    suites
        .into_iter()
        .map(|s| {
            let checks = match s {
                Suite::Divergences => divergences()?,
                Suite::Calibration => calibration(seed)?,
                Suite::Gradients => gradients(seed)?,
                Suite::MechanismMc => mechanism_mc(samples, seed)?,
                Suite::All => unreachable!(),
            };
            Ok((s, checks))
        })
        .collect()
}

pub fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let mut failed = 0;
    for (suite, checks) in run_suite(args.suite, args.samples, args.seed)? {
        println!(
            "{}",
            suite.to_possible_value().expect("named suite").get_name()
        );
        for c in &checks {
            let verdict = if c.pass() { "PASS" } else { "FAIL" };
            let op = if c.upper { "≤" } else { ">" };
            println!(
                "  {verdict}  {}: {:.3e} {op} {:.1e}",
                c.name, c.worst, c.tolerance
            );
            failed += usize::from(!c.pass());
        }
    }
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} checks failed")));
    }
    Ok(())
}
