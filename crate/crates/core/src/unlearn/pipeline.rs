use crate::accountant::{
    calibrate_output_perturbation_unchecked, certify_schedule, min_steps_model_clipping,
    PrivacyBudget, UnlearnSchedule,
};
use crate::data::DataView;
use crate::method::Method;
use crate::nn::{clip_in_place, FlatVector, NetworkSpec, ParamVector, TrainConfig};

use super::procedures::{
    clean_steps, gradient_clipping_steps, model_clipping_steps, output_perturbation, Evaluator,
    Recorder,
};
use super::stream::{derive_seed, MinibatchStream, SeedStream};
use super::{CertifiedTag, Result, RunTrace, UnlearnError};

/// How noisy steps are charged against the compute budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoisyAccounting {
    /// The noisy phase occupies whole epochs: `⌈T / steps-per-epoch⌉`.
    #[default]
    RoundUpEpochs,
    /// Each noisy step costs one minibatch step of the budget.
    Steps,
}

impl NoisyAccounting {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoisyAccounting::RoundUpEpochs => "round_up_epochs",
            NoisyAccounting::Steps => "steps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.replace('-', "_").as_str() {
            "round_up_epochs" => Some(Self::RoundUpEpochs),
            "steps" => Some(Self::Steps),
            _ => None,
        }
    }
}

/// One unlearning run: a noisy phase followed by fine-tuning, both on
/// retain data, for `compute_budget_epochs` epochs of total compute.
///
/// `schedule` is required by the noisy methods and must be absent for the
/// others. Output perturbation takes a schedule with no steps and reads
/// `sigma0` and `radii.c0` from it. Radii a method does not use must be
/// zero. `train` supplies the fine-tuning batch size, learning-rate
/// schedule and weight decay; its `epochs` and `seed` are ignored in favour
/// of `compute_budget_epochs` and `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub budget: PrivacyBudget,
    pub schedule: Option<UnlearnSchedule>,
    pub train: TrainConfig,
    pub compute_budget_epochs: usize,
    pub seed: u64,
    pub accounting: NoisyAccounting,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.compute_budget_epochs == 0 {
            return Err(invalid("compute budget must be at least one epoch"));
        }
        let needs_schedule = matches!(
            self.method,
            Method::OutputPerturbation | Method::GradientClipping | Method::ModelClipping
        );
        let s = match (&self.schedule, needs_schedule) {
            (None, false) => return Ok(()),
            (Some(_), false) => {
                return Err(invalid(&format!(
                    "{} takes no unlearning schedule",
                    self.method
                )))
            }
            (None, true) => {
                return Err(invalid(&format!(
                    "{} needs an unlearning schedule",
                    self.method
                )))
            }
            (Some(s), true) => s,
        };
        let r = s.radii;
        match self.method {
            Method::OutputPerturbation => {
                if s.steps() != 0 || r.c1 != 0.0 || r.c2 != 0.0 {
                    return Err(invalid("output perturbation uses only c0 and sigma0"));
                }
                if !(r.c0 > 0.0 && s.sigma0 > 0.0 && s.sigma0.is_finite()) {
                    return Err(invalid("output perturbation needs c0 > 0 and sigma0 > 0"));
                }
            }
            Method::GradientClipping => {
                if r.c2 != 0.0 || s.sigma0 != 0.0 {
                    return Err(invalid(
                        "gradient clipping uses c0 and c1 only, with no initial noise",
                    ));
                }
                s.validate()?;
                s.check_contractive()?;
            }
            Method::ModelClipping => {
                if r.c1 != 0.0 {
                    return Err(invalid("model clipping uses c0 and c2 only"));
                }
                s.validate()?;
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn noisy_steps(&self) -> usize {
        self.schedule.as_ref().map_or(0, |s| s.steps())
    }

    /// The tag the run will carry, after checking with the accountant that
    /// the schedule really certifies the requested budget.
    pub fn certify(&self) -> Result<Option<CertifiedTag>> {
        let b = self.budget;
        let steps = self.noisy_steps() as u64;
        let tag = Some(CertifiedTag {
            epsilon: b.epsilon,
            delta: b.delta,
            steps,
        });
        let s = match (self.method, &self.schedule) {
            (Method::Retrain, _) => return Ok(Some(CertifiedTag::exact())),
            (Method::FinetuneOnly, _) => return Ok(None),
            (Method::DpSgdGroup, _) => return Ok(tag),
            (_, Some(s)) => s,
            (_, None) => return Err(invalid("missing schedule")),
        };
        match self.method {
            Method::OutputPerturbation => {
                let need = calibrate_output_perturbation_unchecked(&b, s.radii.c0)?;
                if s.sigma0 < need * (1.0 - 1e-12) {
                    return Err(UnlearnError::Uncertified(format!(
                        "σ₀ = {} below the required {need}",
                        s.sigma0
                    )));
                }
            }
            Method::GradientClipping => {
                let dp = certify_schedule(s, b.delta)?;
                if dp.epsilon > b.epsilon * (1.0 + 1e-9) {
                    return Err(UnlearnError::Uncertified(format!(
                        "schedule certifies ε = {} at δ = {}, above the target {}",
                        dp.epsilon, b.delta, b.epsilon
                    )));
                }
            }
            Method::ModelClipping => {
                let sigma = s.sigmas.iter().copied().fold(f64::INFINITY, f64::min);
                let need = min_steps_model_clipping(&b, s.radii.c0, s.radii.c2, s.sigma0, sigma)?;
                if steps < need {
                    return Err(UnlearnError::Uncertified(format!(
                        "{steps} noisy steps, {need} needed"
                    )));
                }
            }
            _ => unreachable!(),
        }
        Ok(tag)
    }
}

fn invalid(msg: &str) -> UnlearnError {
    UnlearnError::InvalidConfig(msg.to_string())
}

/// Runs the method's noisy phase on `pretrained` (a fresh initialization for
/// retraining), then fine-tunes on `retain` until the compute budget is
/// spent. Epoch records count total compute, noisy steps included.
///
/// For [`Method::DpSgdGroup`] the input is expected to be the DP-trained
/// model; the whole budget goes to fine-tuning.
pub fn run_pipeline(
    config: &PipelineConfig,
    spec: &NetworkSpec,
    pretrained: &ParamVector,
    retain: &DataView,
    eval: Option<&Evaluator>,
) -> Result<RunTrace> {
    run_pipeline_with_model(config, spec, pretrained, retain, eval).map(|(_, t)| t)
}

/// [`run_pipeline`], also returning the final model.
pub fn run_pipeline_with_model(
    config: &PipelineConfig,
    spec: &NetworkSpec,
    pretrained: &ParamVector,
    retain: &DataView,
    eval: Option<&Evaluator>,
) -> Result<(ParamVector, RunTrace)> {
    config.validate()?;
    let tag = config.certify()?;
    if retain.is_empty() {
        return Err(UnlearnError::EmptyRetain);
    }
    let mut stream = MinibatchStream::new(
        retain.clone(),
        config.train.batch_size,
        derive_seed(config.seed, SeedStream::Order),
    );
    let per_epoch = stream.steps_per_epoch();
    let noisy = config.noisy_steps();
    let needed = noisy.div_ceil(per_epoch);
    let fits = match config.accounting {
        NoisyAccounting::RoundUpEpochs => needed <= config.compute_budget_epochs,
        NoisyAccounting::Steps => noisy <= config.compute_budget_epochs * per_epoch,
    };
    if !fits {
        return Err(UnlearnError::BudgetTooSmall {
            budget: config.compute_budget_epochs,
            needed,
        });
    }

    let mut rec = Recorder::new(config.method, per_epoch, eval);
    rec.trace.certified = tag;
    rec.trace.initial_test_accuracy = rec.test_accuracy(pretrained)?;
    let noise_seed = derive_seed(config.seed, SeedStream::Noise);
    let mut x = match config.method {
        Method::Retrain => spec.init(derive_seed(config.seed, SeedStream::Init)),
        _ => pretrained.clone(),
    };
    if let Some(s) = &config.schedule {
        match config.method {
            Method::OutputPerturbation => {
                x = output_perturbation(&x, s.radii.c0, s.sigma0, noise_seed)
            }
            Method::GradientClipping => {
                clip_in_place(x.values_mut(), s.radii.c0);
                gradient_clipping_steps(&mut x, spec, &mut stream, s, noise_seed, &mut rec)?;
            }
            Method::ModelClipping => {
                x = output_perturbation(&x, s.radii.c0, s.sigma0, noise_seed);
                model_clipping_steps(&mut x, spec, &mut stream, s, noise_seed, &mut rec)?;
            }
            _ => unreachable!(),
        }
        rec.trace.post_noise_test_accuracy = rec.test_accuracy(&x)?;
        if config.accounting == NoisyAccounting::RoundUpEpochs {
            rec.round_up_to_epoch(&x)?;
            stream.finish_epoch();
        }
    }
    let remaining = config.compute_budget_epochs * per_epoch - rec.step();
    let t = &config.train;
    clean_steps(
        &mut x,
        spec,
        &mut stream,
        t.lr_schedule,
        t.weight_decay,
        remaining,
        &mut rec,
    )?;
    Ok((x, rec.trace))
}
